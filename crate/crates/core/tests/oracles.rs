//! Closed-form and brute-force oracles for the numerical core.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use levynoise::integrand::{DetIntegrand, Prim};
use levynoise::interlace::{self, LadderFlag, LadderKind};
use levynoise::mc::{self, McEstimate};
use levynoise::quad::QuadConfig;
use levynoise::{integrate, ito, prm, LevyMeasure64, Shell64, SpaceBox64, Window64};

fn stable1() -> LevyMeasure64 {
    LevyMeasure64::truncated_stable(1.0, 1.0, 1.0).unwrap()
}

fn shell(lo: f64, hi: f64) -> Shell64 {
    Shell64::new(lo, hi).unwrap()
}

fn unit_window(lo: f64, hi: f64) -> Window64 {
    Window64::new(1.0, SpaceBox64::interval(0.0, 1.0).unwrap(), shell(lo, hi)).unwrap()
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// `∫ g` over `lo < |z| ≤ hi` against `c|z|^{-1-α} e^{-θ|z|}` via the
/// substitution `z = e^y`.
fn radial(g: impl Fn(f64) -> f64, alpha: f64, c: f64, theta: f64, lo: f64, hi: f64) -> f64 {
    let dens = |z: f64| c * z.powf(-1.0 - alpha) * (-theta * z).exp();
    simpson(|y| {
        let z = y.exp();
        z * dens(z) * (g(z) + g(-z))
    }, lo.ln(), hi.ln(), 20_000)
}

#[test]
fn stable_shell_mass_closed_form() {
    let m = stable1();
    let mass = m.shell_mass(&shell(0.5, 1.0)).unwrap();
    assert!((mass - 2.0).abs() < 1e-12, "{mass}");
    let q = radial(|_| 1.0, 1.0, 1.0, 0.0, 0.5, 1.0);
    assert!((q - 2.0).abs() < 1e-10);
}

#[test]
fn tempered_mass_and_moment_match_radial_quadrature() {
    let m = LevyMeasure64::tempered_stable(0.7, 1.3, 2.0).unwrap();
    let s = shell(0.05, 4.0);
    let mass = m.shell_mass(&s).unwrap();
    let oracle = radial(|_| 1.0, 0.7, 1.3, 2.0, 0.05, 4.0);
    assert!((mass - oracle).abs() <= 1e-9 * oracle, "{mass} vs {oracle}");
    let m3 = m.shell_moment(&s, 3.0, false).unwrap();
    let oracle3 = radial(|z| z.abs().powi(3), 0.7, 1.3, 2.0, 0.05, 4.0);
    assert!((m3 - oracle3).abs() <= 1e-9 * oracle3);
}

#[test]
fn stable_variance_is_two() {
    let v = stable1().shell_moment(&Shell64::full(), 2.0, false).unwrap();
    assert!((v - 2.0).abs() < 1e-10, "{v}");
}

#[test]
fn shell_sample_mean_matches_moment_ratio() {
    let m = stable1();
    let s = shell(0.5, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws: Vec<f64> = (0..100_000).map(|_| m.sample_shell(&s, &mut rng).unwrap().abs()).collect();
    let e = McEstimate::from_values(&draws, 11);
    let target = m.shell_moment(&s, 1.0, false).unwrap() / m.shell_mass(&s).unwrap();
    assert!(mc::verdict(&e, target, 4.0).pass, "{e:?} vs {target}");
}

#[test]
fn symmetric_psi_is_real_with_quadratic_leading_term() {
    let m = LevyMeasure64::truncated_stable(1.2, 0.5, 3.0).unwrap();
    let v = 2.0 * 0.5 * 3f64.powf(0.8) / 0.8;
    for u in [0.3, 1.0, 4.0] {
        assert!(m.psi(u).unwrap().im.abs() < 1e-12);
    }
    let u = 1e-3;
    let psi = m.psi(u).unwrap().re;
    let taylor = -u * u * v / 2.0;
    // next term is u⁴·m₄/24
    let m4 = 2.0 * 0.5 * 3f64.powf(2.8) / 2.8;
    assert!((psi - taylor).abs() <= 2.0 * u.powi(4) * m4 / 24.0 + 1e-15, "{psi} vs {taylor}");
}

#[test]
fn atom_psi_is_a_finite_sum() {
    let m = LevyMeasure64::atoms([(1.0, 0.5), (-2.0, 0.25)]).unwrap();
    let i = Complex64::i();
    let want = 0.5 * ((i).exp() - 1.0 - i) + 0.25 * ((-2.0 * i).exp() - 1.0 + 2.0 * i);
    let got = m.psi(1.0).unwrap();
    assert!((got - want).norm() < 1e-14);
}

fn two_atom_unit() -> LevyMeasure64 {
    LevyMeasure64::atoms([(1.0, 1.0), (-1.0, 1.0)]).unwrap()
}

#[test]
fn mean_count_matches_intensity() {
    let m = two_atom_unit();
    let w = unit_window(0.5, 2.0);
    let counts = mc::run_replicates(10_000, 5, 1, |_, rng| {
        prm::simulate_with_rng(&w, &m, rng, 0).map(|c| c.len() as f64)
    })
    .unwrap();
    let e = McEstimate::from_values(&counts, 5);
    assert!(mc::verdict(&e, 2.0, 4.0).pass, "{e:?}");
}

#[test]
fn half_window_counts_are_independent() {
    // Pearson chi-square on a 4×4 table of (count in [0,½], count in (½,1]).
    let m = two_atom_unit();
    let w = unit_window(0.5, 2.0);
    let n = 10_000;
    let pairs = mc::run_replicates(n, 6, 1, |_, rng| {
        prm::simulate_with_rng(&w, &m, rng, 0).map(|c| {
            let a = c.count_until(0.5);
            (a.min(3), (c.len() - a).min(3))
        })
    })
    .unwrap();
    let mut table = [[0f64; 4]; 4];
    for (a, b) in pairs {
        table[a][b] += 1.0;
    }
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..4).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let mut chi2 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let e = rows[i] * cols[j] / n as f64;
            chi2 += (table[i][j] - e).powi(2) / e;
        }
    }
    // 9 degrees of freedom, upper 10⁻³ quantile
    assert!(chi2 < 27.877, "chi2 = {chi2}");
}

#[test]
fn exponential_time_integral() {
    let g = DetIntegrand::time(Prim::Exp { rate: -1.0, abs: false });
    let v = integrate::int_time(&g, 1.0, &QuadConfig::default()).unwrap();
    let oracle = simpson(|s| (-s).exp(), 0.0, 1.0, 2_000);
    assert!((v - (1.0 - (-1f64).exp())).abs() < 1e-12);
    assert!((v - oracle).abs() < 1e-12);
}

#[test]
fn factorized_compensator_matches_tensor_oracle() {
    let m = LevyMeasure64::atoms([(0.4, 1.5), (-1.1, 0.6), (2.0, 0.3)]).unwrap();
    let w = Window64::new(1.5, SpaceBox64::interval(-0.5, 1.0).unwrap(), shell(0.1, 3.0)).unwrap();
    let a = DetIntegrand::time(Prim::Exp { rate: -1.0, abs: false })
        .mul(&DetIntegrand::space(0, Prim::Cos { freq: 2.0, phase: 0.3 }))
        .mul(&DetIntegrand::jump(Prim::Poly { coeffs: vec![0.0, 0.0, 1.0] }));
    let b = DetIntegrand::time(Prim::Poly { coeffs: vec![0.0, 1.0] })
        .mul(&DetIntegrand::space(0, Prim::Poly { coeffs: vec![1.0, 0.0, 1.0] }))
        .mul(&DetIntegrand::z());
    let h = a.add(&b);
    let got = integrate::compensator(&h, &w, &m, 1.2, &QuadConfig::default()).unwrap();
    let atoms = [(0.4, 1.5), (-1.1, 0.6), (2.0, 0.3)];
    let oracle = simpson(
        |s| {
            simpson(
                |x| atoms.iter().map(|&(z, wt)| wt * h.eval(s, &[x], z)).sum::<f64>(),
                -0.5,
                1.0,
                400,
            )
        },
        0.0,
        1.2,
        400,
    );
    assert!((got - oracle).abs() <= 1e-10 * oracle.abs(), "{got} vs {oracle}");
}

#[test]
fn worked_example_thresholds_are_closed_form() {
    let h = DetIntegrand::z();
    let space = SpaceBox64::interval(0.0, 1.0).unwrap();
    let ladder = interlace::eps_sequence(&h, &space, 1.0, &stable1(), 6).unwrap();
    assert_eq!(ladder.flag, LadderFlag::None);
    for l in &ladder.levels {
        let want = 8f64.powi(-(l.n as i32)) / 2.0;
        assert!((l.threshold - want).abs() <= 1e-8 * want, "n={} {} vs {want}", l.n, l.threshold);
    }
}

#[test]
fn spatial_thresholds_are_closed_form() {
    // H = e^{-|x|}·z: I(a) = T·v·e^{-2a} outside [−a, a], so aₙ = (ln(Tv) + n ln 8)/2.
    let h = DetIntegrand::space(0, Prim::Exp { rate: -1.0, abs: true }).mul(&DetIntegrand::z());
    let ladder = interlace::a_sequence(
        LadderKind::SpatialII,
        &h,
        &DetIntegrand::zero(),
        1.0,
        1,
        &stable1(),
        5,
    )
    .unwrap();
    assert_eq!(ladder.levels.len(), 5);
    for l in &ladder.levels {
        let want = (2f64.ln() + l.n as f64 * 8f64.ln()) / 2.0;
        assert!((l.threshold - want).abs() <= 1e-8 * want, "n={} {} vs {want}", l.n, l.threshold);
    }
}

#[test]
fn lemma_residual_for_exp_and_constant_drift() {
    let m = LevyMeasure64::truncated_stable(1.2, 0.5, 3.0).unwrap();
    let w = unit_window(0.1, 3.0);
    let f = ito::SmoothFn::Exp { scale: 0.5 };
    let g = DetIntegrand::constant(0.7);
    let k = DetIntegrand::z();
    let cfg = ito::ItoConfig::default();
    let worst = (0..1000u64)
        .map(|s| {
            let c = prm::simulate(&w, &m, s).unwrap();
            ito::ito_rhs_lemma(&f, &g, &k, &c, &m, 1.0, &cfg).unwrap().residual.abs()
        })
        .fold(0.0, f64::max);
    assert!(worst <= 1e-8, "{worst}");
}

#[test]
fn standard_error_scales_as_inverse_root_n() {
    let m = stable1();
    let w = unit_window(0.05, 1.0);
    let run = |n: usize| {
        let v = mc::run_replicates(n, 9, 1, |_, rng| {
            prm::simulate_with_rng(&w, &m, rng, 0).map(|c| c.points().iter().map(|p| p.z).sum::<f64>())
        })
        .unwrap();
        McEstimate::from_values(&v, 9).se
    };
    let ratio = run(1_000) / run(10_000);
    let want = 10f64.sqrt();
    assert!((ratio / want - 1.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn verdicts_are_calibrated_under_the_null() {
    let m = two_atom_unit();
    let w = unit_window(0.5, 2.0);
    let fails = (0..200u64)
        .filter(|&k| {
            let counts = mc::run_replicates(500, mc::derive_seed(77, k), 1, |_, rng| {
                prm::simulate_with_rng(&w, &m, rng, 0).map(|c| c.len() as f64)
            })
            .unwrap();
            !mc::verdict(&McEstimate::from_values(&counts, 0), 2.0, 4.0).pass
        })
        .count();
    assert!(fails <= 4, "{fails} of 200 failed");
}
