//! Every solver, driven through the public API, lands on the exact saddle of
//! a least-distance problem.

use pdflow::baselines::{alm_run, linearized_alm_run, AlmConfig, LinAlmConfig};
use pdflow::experiments::gen_least_distance;
use pdflow::fipd::{self, FipdConfig};
use pdflow::ilpd::{ilpd_run, IlpdConfig};
use pdflow::format::{parse_problem, write_problem};
use pdflow::{DVector, LoopControl, RunResult, RunStatus, SaddleCertificate};

fn control() -> LoopControl {
    LoopControl {
        max_outer: 20_000,
        stop_res: 1e-7,
        ..LoopControl::default()
    }
}

fn close(name: &str, r: &RunResult, cert: &SaddleCertificate) {
    assert_eq!(r.status, RunStatus::Converged, "{name}");
    let err = (&r.x - &cert.x_star).amax();
    assert!(err <= 1e-6, "{name}: |x − x*| = {err:.1e}");
}

#[test]
fn all_solvers_find_the_saddle() {
    let (p, cert) = gen_least_distance(4, 10, 11).unwrap();
    let x0 = DVector::zeros(10);
    let l0 = DVector::zeros(4);

    let f = FipdConfig {
        control: control(),
        ..FipdConfig::theta2_preset()
    };
    close("fipd", &fipd::run(&p, &f, x0.clone(), l0.clone()).unwrap(), &cert);

    let f = FipdConfig {
        control: control(),
        ..FipdConfig::theta3_preset()
    };
    close("fipd θ=3", &fipd::run(&p, &f, x0.clone(), l0.clone()).unwrap(), &cert);

    let i = IlpdConfig {
        control: control(),
        ..IlpdConfig::default()
    };
    close("ilpd", &ilpd_run(&p, &i, x0.clone(), l0.clone()).unwrap(), &cert);

    let a = AlmConfig {
        control: control(),
        ..AlmConfig::default()
    };
    close("alm", &alm_run(&p, &a, x0.clone(), l0.clone()).unwrap(), &cert);

    let l = LinAlmConfig {
        control: control(),
        ..LinAlmConfig::default()
    };
    close("lin-alm", &linearized_alm_run(&p, &l, x0, l0).unwrap(), &cert);
}

#[test]
fn text_format_preserves_runs() {
    let (p, _) = gen_least_distance(3, 7, 2).unwrap();
    let q = parse_problem(&write_problem(&p)).unwrap();
    let f = FipdConfig {
        control: LoopControl {
            max_outer: 50,
            ..LoopControl::default()
        },
        ..FipdConfig::default()
    };
    let a = fipd::run(&p, &f, DVector::zeros(7), DVector::zeros(3)).unwrap();
    let b = fipd::run(&q, &f, DVector::zeros(7), DVector::zeros(3)).unwrap();
    assert_eq!(a.x, b.x);
    assert_eq!(a.lam, b.lam);
}
