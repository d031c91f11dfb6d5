use mppi_bench::config::{EtaRule, Experiment, RunConfig};
use mppi_bench::emit::{ITER_HEADER, SNAPSHOT_FILE, SUMMARY_FILE};
use mppi_bench::{dubins, execute, lqr, Outcome};

fn small_lqr() -> RunConfig {
    let mut cfg = RunConfig {
        seeds: vec![3],
        ..RunConfig::default()
    };
    cfg.lqr.iterations = 300;
    cfg.lqr.fd.iterations = 50;
    cfg
}

#[test]
fn lqr_records_have_one_row_per_iteration_and_a_complete_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_lqr();
    let Outcome::Lqr(report) = execute(&cfg, tmp.path()).unwrap() else {
        panic!("wrong outcome");
    };
    for cell in &report.cells {
        let text = std::fs::read_to_string(tmp.path().join(mppi_bench::emit::lqr_cell_file(cell))).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), ITER_HEADER.join(","));
        assert_eq!(lines.count(), cfg.lqr.iterations);
        assert!(!text.contains('\r'));
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join(SUMMARY_FILE)).unwrap()).unwrap();
    for cell in summary["cells"].as_array().unwrap() {
        assert!(cell["eta"].is_f64());
        assert!(cell["l_sigma"].is_f64());
        assert!(cell["eta_rule"].is_string());
        assert!(cell["runtime_seconds"].is_f64());
    }
    assert!(summary["tool_version"].is_string());
    assert!(summary["config"].is_object());
    assert!(tmp.path().join(SNAPSHOT_FILE).exists());
    assert!(tmp.path().join("plot").join("fd_gap_vs_evaluations.csv").exists());
}

#[test]
fn lqr_gap_starts_at_zero_control_cost_and_stays_nonnegative() {
    let cfg = small_lqr();
    let report = lqr::run_lqr(&cfg).unwrap();
    assert!((report.reference.f_star - 8.58375).abs() < 1e-4);
    for cell in &report.cells {
        assert!((cell.rows[0].gap - (62.5 - report.reference.f_star)).abs() < 1e-9);
        for row in cell.rows.iter().filter(|r| r.mean_feasible) {
            assert!(row.gap >= -1e-6, "gap {} at k={}", row.gap, row.k);
        }
        assert_eq!(cell.rows.iter().filter(|r| !r.mean_feasible).count(), cell.infeasible_means);
    }
    let unit = report.cells.iter().find(|c| c.rule == EtaRule::Unit).unwrap();
    assert_eq!(unit.eta, 1.0);
    let inv = report.cells.iter().find(|c| c.rule == EtaRule::InverseL).unwrap();
    assert!((inv.eta * inv.l_sigma - 1.0).abs() < 1e-12);
}

#[test]
fn zero_obstacle_dubins_run_reaches_the_target() {
    let mut cfg = RunConfig {
        experiment: Experiment::Dubins,
        ..RunConfig::default()
    };
    cfg.dubins.obstacles.clear();
    cfg.dubins.k = vec![10];
    let report = dubins::run_dubins(&cfg).unwrap();
    let target = cfg.dubins.target;
    for run in &report.runs {
        assert!(!run.unsafe_run);
        // The car moves at constant speed, so it passes through the goal
        // rather than stopping there; the closest approach is the metric.
        let closest = run
            .trace
            .states
            .iter()
            .map(|x| ((x[0] - target[0]).powi(2) + (x[1] - target[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(closest < 0.5, "seed {}: closest approach {closest}", run.seed);
    }
}

#[test]
fn dubins_runs_record_every_step() {
    let mut cfg = RunConfig {
        experiment: Experiment::Dubins,
        ..RunConfig::default()
    };
    cfg.dubins.k = vec![2];
    cfg.dubins.sim_steps = 5;
    cfg.seeds = vec![1];
    let tmp = tempfile::tempdir().unwrap();
    execute(&cfg, tmp.path()).unwrap();
    let text = std::fs::read_to_string(tmp.path().join(mppi_bench::emit::dubins_run_file(2, 1))).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(tmp.path().join("dubins_summary.csv").exists());
}
