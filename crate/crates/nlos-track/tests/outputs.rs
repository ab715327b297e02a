use std::fs;

use nlos_track::config::ScenarioFile;
use nlos_track::output::{write_run, MEASUREMENTS_CSV, METRICS_CSV, TRIALS_CSV};
use nlos_track::{run_experiment, summarize_run};
use nlos_track_core::filters::FilterKind;
use nlos_track_core::metrics::rmse;
use nlos_track_core::model::StateVector;
use nlos_track_core::scenario::{FilterTrace, ScenarioSpec, TrialRecord};

fn spec() -> ScenarioSpec {
    let mut s = ScenarioSpec::square("rt", 100.0, 1);
    s.trials = 5;
    s.steps = 80;
    s
}

/// Rebuilds truth, estimates and divergence flags from `trials.csv`.
fn read_trials(path: &std::path::Path, filters: &[FilterKind]) -> Vec<TrialRecord> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let mut records: Vec<TrialRecord> = Vec::new();
    for row in rdr.records() {
        let row = row.unwrap();
        let f = |i: usize| row[i].parse::<f64>().unwrap();
        let trial: usize = row[col("trial")].parse().unwrap();
        if records.last().map(|r| r.trial) != Some(trial) {
            records.push(TrialRecord {
                trial,
                truth: Vec::new(),
                frames: Vec::new(),
                traces: filters
                    .iter()
                    .map(|&kind| FilterTrace {
                        kind,
                        estimates: Vec::new(),
                        diverged: false,
                        diverged_at: None,
                        projected: Vec::new(),
                        infeasible_skips: Vec::new(),
                        mean_violation: Vec::new(),
                        dense_fallbacks: 0,
                        failure: None,
                    })
                    .collect(),
            });
        }
        let r = records.last_mut().unwrap();
        let at = col("truth_x");
        r.truth
            .push(StateVector::new(f(at), f(at + 1), f(at + 2), f(at + 3)));
        for t in &mut r.traces {
            let at = col(&format!("{}_x", t.kind));
            t.estimates
                .push(StateVector::new(f(at), f(at + 1), f(at + 2), f(at + 3)));
            t.diverged |= &row[col(&format!("{}_diverged", t.kind))] == "1";
        }
    }
    records
}

#[test]
fn rmse_from_csv_matches_memory() {
    let spec = spec();
    let filters = FilterKind::ALL;
    let records = run_experiment(&spec, &filters, None).unwrap();
    let summaries = summarize_run(&records, &filters).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let file = ScenarioFile::from_spec(&spec, Some(&filters));
    write_run(tmp.path(), &file, &filters, &records, &summaries).unwrap();

    let back = read_trials(&tmp.path().join(TRIALS_CSV), &filters);
    assert_eq!(back.len(), spec.trials);
    let mut metrics = csv::Reader::from_path(tmp.path().join(METRICS_CSV)).unwrap();
    let rows: Vec<csv::StringRecord> = metrics.records().map(Result::unwrap).collect();
    for (i, kind) in filters.iter().enumerate() {
        let mem = rmse(&records, *kind).unwrap();
        let disk = rmse(&back, *kind).unwrap();
        for k in 0..spec.steps {
            assert!((mem[k] - disk[k]).abs() <= 1e-12 * mem[k].max(1.0));
            let written: f64 = rows[k][i + 1].parse().unwrap();
            assert_eq!(written, mem[k]);
        }
    }
}

#[test]
fn measurement_dump_is_shared_by_filters() {
    let spec = spec();
    let tmp = tempfile::tempdir().unwrap();
    let mut dumps = Vec::new();
    for (i, filters) in [
        vec![FilterKind::Csrukf],
        vec![FilterKind::Bekf, FilterKind::Sekf],
    ]
    .into_iter()
    .enumerate()
    {
        let records = run_experiment(&spec, &filters, Some(2)).unwrap();
        let summaries = summarize_run(&records, &filters).unwrap();
        let dir = tmp.path().join(i.to_string());
        let file = ScenarioFile::from_spec(&spec, Some(&filters));
        write_run(&dir, &file, &filters, &records, &summaries).unwrap();
        dumps.push(fs::read(dir.join(MEASUREMENTS_CSV)).unwrap());
    }
    assert_eq!(dumps[0], dumps[1]);
    assert_eq!(
        String::from_utf8_lossy(&dumps[0]).lines().count(),
        1 + spec.trials * spec.steps * 4
    );
}
