use jumpsde::harness::{
    apply_window, rate_fit, refit, run_convergence, ExperimentConfig, FitPoint, Measured,
};
use proptest::prelude::*;

fn base(steps: &str, checkpoints: &str, x0: f64, paths: usize) -> ExperimentConfig {
    ExperimentConfig::parse(&format!(
        r#"
seed = 11
paths = {paths}
checkpoints = {checkpoints}
x0 = [{x0}]

[model]
preset = "additive-linear(1, 0.5, 4, 1)"

[steps]
{steps}

[reference]
burn_in = 8.0

[distance]
bootstrap = 50
"#
    ))
    .unwrap()
}

#[test]
fn refit_reproduces_report_fits() {
    let cfg = base("kind = \"harmonic\"\nscale = 8.0\ncap = 0.5", "[32, 64, 128, 256, 512]", 0.5, 1000);
    let run = run_convergence(&cfg, 1).unwrap();
    let (w1, tv) = refit(&run.report);
    assert_eq!(Some(w1), run.report.w1_fit);
    assert_eq!(Some(tv), run.report.tv_fit);
    for row in &run.report.rows {
        let m = row.w1.as_ref().unwrap();
        assert!(m.value >= 0.0 && m.stderr >= 0.0);
        assert_eq!(m.in_window, m.excluded.is_none());
    }
}

#[test]
fn constant_step_control_has_no_rate() {
    // constant steps: the distance settles at the step bias and does not
    // follow a harmonic schedule it never used
    let cfg = base("kind = \"constant\"\nstep = 0.125", "[128, 256, 512, 1024]", 0.5, 4000);
    let run = run_convergence(&cfg, 1).unwrap();
    let points: Vec<FitPoint> = run
        .report
        .rows
        .iter()
        .map(|r| {
            let m = r.w1.as_ref().unwrap();
            FitPoint {
                gamma: 8.0 / r.n as f64,
                distance: m.value,
                stderr: m.stderr,
            }
        })
        .collect();
    let fit = rate_fit(&points).unwrap();
    assert!(fit.slope.abs() < 0.25, "control slope {}", fit.slope);
    // the report itself cannot fit a rate on a single step value
    let f = run.report.w1_fit.as_ref().unwrap();
    assert!(f.fit.is_none() && f.note.is_some());
}

#[test]
fn far_start_leaves_window_empty() {
    let cfg = base("kind = \"harmonic\"\nscale = 1.0\ncap = 0.25", "[4, 8, 16]", 60.0, 500);
    let run = run_convergence(&cfg, 1).unwrap();
    for row in &run.report.rows {
        let m = row.w1.as_ref().unwrap();
        assert!(!m.in_window, "row {} kept", row.n);
        assert!(m.excluded.as_deref().unwrap().contains("exponential"));
    }
    let f = run.report.w1_fit.as_ref().unwrap();
    assert!(f.window.is_empty());
    assert!(f.fit.is_none());
    assert_eq!(f.note.as_deref(), Some("fit window is empty"));
}

#[test]
fn threads_do_not_change_results() {
    let cfg = base("kind = \"harmonic\"\nscale = 8.0\ncap = 0.5", "[16, 64]", 0.5, 300);
    let a = run_convergence(&cfg, 1).unwrap();
    let b = run_convergence(&cfg, 3).unwrap();
    assert_eq!(a.report, b.report);
}

proptest! {
    // the exponential term e^{-theta Gamma_n / 2} D only shrinks with n, so
    // feeding later checkpoints never changes the verdict on earlier rows
    #[test]
    fn window_rule_is_monotone_in_checkpoints(
        theta in 0.01f64..3.0,
        diameter in 0.01f64..10.0,
        value in 1e-4f64..1.0,
        rel in 0.0f64..0.6,
        t1 in 0.0f64..50.0,
        dt in 0.0f64..50.0,
    ) {
        let mut early = Measured { value, stderr: rel * value, in_window: false, excluded: None };
        let mut later = early.clone();
        apply_window(&mut early, Some((-theta * t1 / 2.0).exp() * diameter), 0.2, 0.5);
        apply_window(&mut later, Some((-theta * (t1 + dt) / 2.0).exp() * diameter), 0.2, 0.5);
        prop_assert!(!early.in_window || later.in_window);

        let mut again = Measured { value, stderr: rel * value, in_window: false, excluded: None };
        apply_window(&mut again, Some((-theta * t1 / 2.0).exp() * diameter), 0.2, 0.5);
        prop_assert_eq!(again, early);
    }

    #[test]
    fn no_theta_means_no_window(value in 1e-6f64..1.0, rel in 0.0f64..0.4) {
        let mut m = Measured { value, stderr: rel * value, in_window: true, excluded: None };
        apply_window(&mut m, None, 0.2, 0.5);
        prop_assert!(!m.in_window);
    }
}
