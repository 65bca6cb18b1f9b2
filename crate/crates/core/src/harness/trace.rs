//! Newline-delimited JSON interaction traces, one record per interaction:
//! `{"t":..,"initiator":..,"responder":..,"changed_fields":{..}}`. Enabled by
//! `--trace` for populations of at most 256 agents.

use std::io::Write;

use serde_json::{json, Map, Value};

use crate::engine::StepObserver;
use crate::state::{AgentState, VarSpec};

pub const TRACE_MAX_N: usize = 256;

pub struct TraceWriter<W: Write> {
    out: W,
    vars: &'static [VarSpec],
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W, vars: &'static [VarSpec]) -> Self {
        TraceWriter { out, vars }
    }

    fn diff(&self, before: &AgentState, after: &AgentState) -> Option<Map<String, Value>> {
        let mut changed = Map::new();
        for var in self.vars {
            let old = (var.extract)(before);
            let new = (var.extract)(after);
            if old != new {
                changed.insert(var.name.to_string(), json!(new));
            }
        }
        if changed.is_empty() {
            None
        } else {
            Some(changed)
        }
    }
}

impl<W: Write> StepObserver for TraceWriter<W> {
    fn on_step(
        &mut self,
        t: u64,
        initiator: usize,
        responder: usize,
        before: (&AgentState, &AgentState),
        after: (&AgentState, &AgentState),
    ) {
        let mut changed = Map::new();
        if let Some(d) = self.diff(before.0, after.0) {
            changed.insert(initiator.to_string(), Value::Object(d));
        }
        if let Some(d) = self.diff(before.1, after.1) {
            changed.insert(responder.to_string(), Value::Object(d));
        }
        let record = json!({
            "t": t,
            "initiator": initiator,
            "responder": responder,
            "changed_fields": Value::Object(changed),
        });
        // Trace records are best-effort diagnostics; a full disk should not
        // kill the run half-way through metrics collection.
        let _ = writeln!(self.out, "{record}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Runner, RunLimits};
    use crate::profile::Profile;
    use crate::suites::make_suite;

    #[test]
    fn trace_records_every_interaction_with_changes() {
        let suite = make_suite("backup-exact", &Profile::desk()).unwrap();
        let buf: Vec<u8> = Vec::new();
        let writer = TraceWriter::new(buf, suite.tracked_vars());
        let mut runner = Runner::new(suite.as_ref(), 4, 1, RunLimits::new(50, 0))
            .unwrap()
            .with_observer(Box::new(writer));
        runner.run_to_end().unwrap();
        // The writer is owned by the runner; re-run with a shared sink to
        // inspect the bytes.
        struct Sink(std::rc::Rc<std::cell::RefCell<Vec<u8>>>);
        impl Write for Sink {
            fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
                self.0.borrow_mut().extend_from_slice(buf);
                Ok(buf.len())
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let shared = std::rc::Rc::new(std::cell::RefCell::new(Vec::new()));
        let writer = TraceWriter::new(Sink(shared.clone()), suite.tracked_vars());
        let mut runner = Runner::new(suite.as_ref(), 4, 1, RunLimits::new(50, 0))
            .unwrap()
            .with_observer(Box::new(writer));
        runner.run_to_end().unwrap();
        let bytes = shared.borrow().clone();
        let text = String::from_utf8(bytes).unwrap();
        let mut saw_change = false;
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.get("t").is_some());
            assert!(v.get("initiator").is_some());
            assert!(v.get("responder").is_some());
            if !v["changed_fields"].as_object().unwrap().is_empty() {
                saw_change = true;
            }
        }
        assert!(saw_change);
    }
}
