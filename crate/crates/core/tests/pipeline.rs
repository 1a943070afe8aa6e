use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ceal::combiner::MetricKind;
use ceal::executor::{brute_force_oracle, Executor, OracleTable, Provenance};
use ceal::harness::{example_workflow, prepare_rep};
use ceal::space::SamplePool;
use ceal::tuner::{
    run, Algorithm, Budget, HistoricalData, TunerConfig, TuningRequest, TuningTrace,
};
use ceal::workflow::Workflow;

// Component costs are 64 / a + a and 36 / b + b seconds; the workflow
// takes the slower one.
const TOY_SCRIPT: &str = r#"
awk -v mode="$1" -v a="$2" -v b="$3" 'BEGIN {
  x = 64 / a + a; y = 36 / b + b
  if (mode == "left") printf "RESULT exec_s=%s nodes=1 cores_per_node=4 comp_times=%s\n", x, x
  else if (mode == "right") printf "RESULT exec_s=%s nodes=1 cores_per_node=4 comp_times=%s\n", y, y
  else printf "RESULT exec_s=%s nodes=2 cores_per_node=4 comp_times=%s,%s\n", (x > y ? x : y), x, y
}'
"#;

fn toy_workflow(dir: &Path) -> Workflow {
    let script = dir.join("toy.sh");
    std::fs::write(&script, TOY_SCRIPT).unwrap();
    let sh = format!("sh {}", script.display());
    let json = serde_json::json!({
        "name": "toy",
        "metric": "execution_time",
        "cores_per_node": 4,
        "components": [
            {"name": "left", "parameters": [{"name": "a", "range": {"lo": 1, "hi": 16, "step": 1}}],
             "command": format!("{sh} left {{a}} 1")},
            {"name": "right", "parameters": [{"name": "b", "range": {"lo": 1, "hi": 16, "step": 1}}],
             "command": format!("{sh} right 1 {{b}}")}
        ],
        "external": {"command": format!("{sh} both {{a}} {{b}}"), "timeout_s": 10, "concurrent": false}
    });
    Workflow::from_json(&json.to_string(), dir).unwrap()
}

fn toy_cost(a: f64, b: f64) -> f64 {
    (64.0 / a + a).max(36.0 / b + b)
}

#[test]
fn ceal_drives_an_external_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let wf = toy_workflow(dir.path());
    let exec = wf.external_executor().unwrap();
    let pool = SamplePool::from_configurations(wf.space.enumerate_feasible(1000).unwrap()).unwrap();
    assert_eq!(pool.len(), 256);
    let history = HistoricalData::empty(2);
    let config = TunerConfig::for_workflow(&wf);
    let req = TuningRequest {
        workflow: &wf,
        pool: &pool,
        budget: Budget::new(20, 4, 4, 2).unwrap(),
        history: &history,
        executor: &exec,
        config: &config,
        seed: 1,
        checkpoint: None,
    };
    let out = run(Algorithm::Ceal, &req).unwrap();
    let s = out.summary();
    assert_eq!(s.total_charged, 20);
    assert_eq!(s.failed_runs, 0);
    assert_eq!(out.trace.component_runs.len(), 8);
    for row in out.trace.workflow_measurements() {
        let m = &row.measurement;
        assert!(m.is_ok());
        let v = m.configuration.values();
        let want = toy_cost(v[0], v[1]);
        // awk prints six significant digits
        assert!((m.execution_time - want).abs() <= 1e-4 * want, "{v:?}");
        assert_eq!(m.provenance, Provenance::External);
        assert_eq!(m.computer_time, m.execution_time * 8.0 / 3600.0);
    }
}

#[test]
fn trace_file_round_trips() {
    let wf = example_workflow();
    let ctx = prepare_rep(&wf, &wf.synthetic_executor().unwrap(), 0, 5, 300, 60).unwrap();
    let config = TunerConfig::for_workflow(&wf);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.jsonl");
    let req = TuningRequest {
        workflow: &wf,
        pool: &ctx.pool,
        budget: Budget::new(40, 12, 6, 3).unwrap(),
        history: ctx.history.as_ref(),
        executor: ctx.executor.as_ref(),
        config: &config,
        seed: 9,
        checkpoint: Some(&path),
    };
    let out = run(Algorithm::Ceal, &req).unwrap();
    // the streamed checkpoint and the in-memory trace agree
    let streamed = std::fs::read_to_string(&path).unwrap();
    assert_eq!(streamed, out.trace.to_jsonl());
    let back = TuningTrace::read(&path).unwrap();
    assert_eq!(back.to_jsonl(), streamed);
    let again = dir.path().join("again.jsonl");
    back.write(&again).unwrap();
    assert_eq!(std::fs::read_to_string(again).unwrap(), streamed);
}

#[test]
fn history_files_round_trip() {
    let wf = example_workflow();
    let exec = wf.synthetic_executor().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let hist = HistoricalData::collect(&wf, &exec, 40, &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = hist.write_files(&wf, dir.path()).unwrap();
    assert_eq!(files.len(), 2);
    let back = HistoricalData::load_files(&wf, &files).unwrap();
    assert_eq!(back.components, hist.components);
    assert_eq!(back.row_counts(2), vec![40, 40]);
    assert!(back
        .components
        .iter()
        .flatten()
        .all(|r| r.provenance == Provenance::History));
}

#[test]
fn oracle_csv_round_trips() {
    let wf = example_workflow();
    let exec = wf.synthetic_executor().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pool = SamplePool::build(&wf.space, 150, &mut rng).unwrap();
    let table = brute_force_oracle(&exec, pool.configurations()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("oracle.csv");
    table.write_csv(&path).unwrap();
    let back = OracleTable::read_csv(&path).unwrap();
    assert_eq!(back.len(), 150);
    for kind in [MetricKind::ExecutionTime, MetricKind::ComputerTime] {
        assert_eq!(back.values(kind), table.values(kind));
        assert_eq!(back.optimum(kind), table.optimum(kind));
    }
    // a table replays as an executor
    let c = pool.get(17);
    assert_eq!(
        back.measure_workflow(c).execution_time,
        table.row_of(c).unwrap().execution_time
    );
}
