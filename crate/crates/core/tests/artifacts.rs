//! Run-directory file formats and the export surface consumed by plotting.

use std::collections::BTreeSet;
use std::path::Path;

use eparvi::experiment::{
    execute, verify_manifest, ExperimentConfig, Manifest, RunOptions, RunStatus, DIAGNOSTICS, LMC_POSITIONS, MANIFEST,
    METRICS, MH_SAMPLES, POSITIONS, RESOLVED_CONFIG,
};
use eparvi::export::{export, ExportKind, ExportRequest};
use eparvi::io::read_positions_file;
use eparvi::summaries::Marginal;
use eparvi::Error;

const FUNNEL: &str = r#"
name = "tiny-funnel"
seed = 3

[target]
id = "neals-funnel"

[mesh]
bounds = [[-7.0, 3.0], [-7.0, 3.0]]
counts = [20, 20]
mode = "density"
q_max = 2.0

[sampler]
particles = 30
iterations = 6
rule = { kind = "euler", tau = 0.1 }
snapshot_stride = 3
metrics_every = 2

[baselines.mh]
n_samples = 200
proposal_std = [1.0]
init = [0.0, 0.0]

[baselines.lmc]
iterations = 20
a = 0.01
b = 1.0
c = 0.55

[metrics]
avg_nll = true
"#;

const LV: &str = r#"
name = "tiny-lv"

[target]
id = "lotka-volterra"

[mesh]
bounds = [[0.001, 1.0], [0.001, 0.05], [0.001, 0.05], [0.001, 1.0]]
counts = [4, 3, 3, 4]
mode = "log-density-offset"
q_max = 1e-5

[sampler]
particles = 5
iterations = 2
rule = { kind = "euler", tau = 0.01 }
"#;

fn run(toml: &str, dir: &Path) -> Manifest {
    let cfg = ExperimentConfig::from_toml(toml).unwrap();
    execute(&cfg, None, dir, &RunOptions::default()).unwrap()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect();
    (header, rows)
}

fn json_keys(line: &str) -> BTreeSet<String> {
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    v.as_object().unwrap().keys().cloned().collect()
}

fn export_bytes(dir: &Path, req: &ExportRequest) -> Result<Vec<u8>, Error> {
    let mut buf = Vec::new();
    export(dir, req, &mut buf).map(|_| buf)
}

#[test]
fn run_directory_holds_every_artifact_with_matching_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = run(FUNNEL, dir.path());
    assert_eq!(manifest.status, RunStatus::Complete);
    let names: BTreeSet<&str> = manifest.files.keys().map(String::as_str).collect();
    let expected: BTreeSet<&str> =
        [RESOLVED_CONFIG, POSITIONS, DIAGNOSTICS, METRICS, MH_SAMPLES, LMC_POSITIONS].into_iter().collect();
    assert_eq!(names, expected);
    assert!(dir.path().join(MANIFEST).is_file());
    assert!(verify_manifest(dir.path()).unwrap().is_empty());

    std::fs::write(dir.path().join(METRICS), "tampered\n").unwrap();
    assert_eq!(verify_manifest(dir.path()).unwrap(), vec![METRICS.to_string()]);
}

#[test]
fn positions_csv_schema_and_snapshot_stride() {
    let dir = tempfile::tempdir().unwrap();
    run(FUNNEL, dir.path());
    let (header, rows) = csv_rows(&dir.path().join(POSITIONS));
    assert_eq!(header, ["iteration", "particle_id", "x0", "x1"]);
    let iterations: BTreeSet<usize> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(iterations, [0, 3, 6].into_iter().collect());
    assert_eq!(rows.len(), 3 * 30);
    for r in &rows {
        assert!(r[1].parse::<usize>().unwrap() < 30);
        assert!(r[2].parse::<f64>().unwrap().is_finite());
    }
    let snaps = read_positions_file(&dir.path().join(POSITIONS)).unwrap();
    assert_eq!(snaps.len(), 3);
    assert_eq!(snaps[0].ids, (0..30).collect::<Vec<_>>());
}

#[test]
fn baseline_sample_files_share_the_positions_schema() {
    let dir = tempfile::tempdir().unwrap();
    run(FUNNEL, dir.path());
    let (header, rows) = csv_rows(&dir.path().join(MH_SAMPLES));
    assert_eq!(header, ["iteration", "particle_id", "x0", "x1"]);
    // 20% burn-in discarded.
    assert_eq!(rows.len(), 160);
    let (header, rows) = csv_rows(&dir.path().join(LMC_POSITIONS));
    assert_eq!(header, ["iteration", "particle_id", "x0", "x1"]);
    assert_eq!(rows.len(), 30);
}

#[test]
fn diagnostics_jsonl_has_one_record_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    run(FUNNEL, dir.path());
    let text = std::fs::read_to_string(dir.path().join(DIAGNOSTICS)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    let required: BTreeSet<String> = [
        "iteration",
        "max_force_norm",
        "mean_force_norm",
        "particles",
        "in_region",
        "mean_displacement",
        "anneal_multiplier",
        "wall_time_s",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    for (k, line) in lines.iter().enumerate() {
        let keys = json_keys(line);
        assert!(keys.is_superset(&required), "line {k}: {keys:?}");
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["iteration"], k + 1);
        // metrics_every = 2 attaches a report to even iterations only.
        assert_eq!(keys.contains("metrics"), (k + 1) % 2 == 0, "line {k}");
    }
}

#[test]
fn metrics_jsonl_reports_each_method() {
    let dir = tempfile::tempdir().unwrap();
    run(FUNNEL, dir.path());
    let text = std::fs::read_to_string(dir.path().join(METRICS)).unwrap();
    let mut rows = Vec::new();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(json_keys(line).contains("n_x"));
        assert!(v["avg_nll"].as_f64().unwrap().is_finite());
        rows.push((v["method"].as_str().unwrap().to_string(), v["iteration"].as_u64()));
    }
    let eparvi: Vec<_> = rows.iter().filter(|(m, _)| m == "eparvi").map(|(_, it)| *it).collect();
    // Periodic reports every 2 iterations, then the final ensemble.
    assert_eq!(eparvi, [Some(2), Some(4), Some(6), Some(6)]);
    let others: BTreeSet<&str> = rows.iter().map(|(m, _)| m.as_str()).filter(|m| *m != "eparvi").collect();
    assert_eq!(others, ["lmc", "mh"].into_iter().collect());
}

#[test]
fn resolved_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    run(FUNNEL, dir.path());
    let resolved = ExperimentConfig::from_file(&dir.path().join(RESOLVED_CONFIG)).unwrap();
    let original = ExperimentConfig::from_toml(FUNNEL).unwrap();
    assert_eq!(resolved.seed, original.seed);
    assert_eq!(resolved.mesh, original.mesh);
    assert_eq!(resolved, ExperimentConfig::from_toml(&resolved.to_toml().unwrap()).unwrap());
}

#[test]
fn marginals_export_counts_every_in_region_particle() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = run(FUNNEL, dir.path());
    let mut req = ExportRequest::new(ExportKind::Marginals);
    req.bins = 7;
    let marg: Vec<Marginal> = serde_json::from_slice(&export_bytes(dir.path(), &req).unwrap()).unwrap();
    assert_eq!(marg.len(), 2);
    for (k, m) in marg.iter().enumerate() {
        assert_eq!(m.dim, k);
        assert_eq!(m.histogram.counts.len(), 7);
        assert_eq!(m.histogram.edges.len(), 8);
        assert_eq!(m.histogram.counts.iter().sum::<usize>(), manifest.particles_in_region.unwrap());
        assert_eq!(m.kde.grid.len(), m.kde.density.len());
        assert!(m.kde.bandwidth > 0.0);
    }
}

#[test]
fn density_grid_export_matches_the_target() {
    let dir = tempfile::tempdir().unwrap();
    run(FUNNEL, dir.path());
    let mut req = ExportRequest::new(ExportKind::DensityGrid);
    req.resolution = 5;
    let bytes = export_bytes(dir.path(), &req).unwrap();
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    assert_eq!(r.headers().unwrap(), vec!["x0", "x1", "log_density", "density"]);
    let target = eparvi::targets::TargetSpec::from_id("neals-funnel").unwrap().build(None).unwrap();
    let rows: Vec<Vec<f64>> =
        r.records().map(|rec| rec.unwrap().iter().map(|s| s.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 25);
    assert_eq!((rows[0][0], rows[0][1]), (-7.0, -7.0));
    assert_eq!((rows[24][0], rows[24][1]), (3.0, 3.0));
    for row in rows {
        assert!((row[2] - target.log_density(&row[..2])).abs() < 1e-12);
        assert!((row[3] - row[2].exp()).abs() <= 1e-12 * row[3].max(1e-300));
    }

    req.axes = (0, 0);
    assert!(matches!(export_bytes(dir.path(), &req), Err(Error::Config(_))));
    req.axes = (0, 1);
    req.fixed = Some(vec![0.0]);
    assert!(matches!(export_bytes(dir.path(), &req), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn lv_predictive_export_has_observed_and_particle_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = run(LV, dir.path());
    let bytes = export_bytes(dir.path(), &ExportRequest::new(ExportKind::LvPredictive)).unwrap();
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    assert_eq!(r.headers().unwrap(), vec!["particle_id", "t", "hare", "lynx"]);
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    let observed: Vec<_> = rows.iter().filter(|r| &r[0] == "observed").collect();
    assert_eq!(observed.len(), 21);
    assert_eq!((&observed[0][1], &observed[0][2], &observed[0][3]), ("0", "30", "4"));
    let particles = rows.len() - observed.len();
    assert_eq!(particles, 21 * manifest.particles_in_region.unwrap());
    for r in rows.iter().filter(|r| &r[0] != "observed") {
        r[0].parse::<usize>().unwrap();
        assert!(r[2].parse::<f64>().unwrap() > 0.0);
        assert!(r[3].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn lv_predictive_rejects_other_targets() {
    let dir = tempfile::tempdir().unwrap();
    run(FUNNEL, dir.path());
    let err = export_bytes(dir.path(), &ExportRequest::new(ExportKind::LvPredictive)).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn export_kinds_parse_from_their_names() {
    for (name, kind) in [
        ("marginals", ExportKind::Marginals),
        ("density-grid", ExportKind::DensityGrid),
        ("lv-predictive", ExportKind::LvPredictive),
    ] {
        assert_eq!(name.parse::<ExportKind>().unwrap(), kind);
    }
    assert!("histogram".parse::<ExportKind>().is_err());
}
