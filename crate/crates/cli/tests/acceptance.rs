//! Acceptance criteria 1–11. Runs with its own harness so the one-line
//! `criterion N: PASS|FAIL` verdicts always reach the output. Positional
//! arguments filter criteria by name substring.

use std::fs;
use std::panic;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use cfprior::bench::run_benchmark;
use cfprior::commands::{cmd_bench, BenchOverrides};
use cfprior::config::{BenchConfig, DataConfig, MethodConfig, MethodKind, ModelConfig, RunConfig};
use cfprior_core::actionability::fit_policy_conditional;
use cfprior_core::codec::FeatureSchema;
use cfprior_core::generators::{gen_posterior_sample, Actionability, PosteriorSource};
use cfprior_core::posterior::{
    posterior_pgm1, posterior_pgm2, posterior_pgm2_closed_form, posterior_pgm3, posterior_pgm3_with_precision,
    posterior_via_joint,
};
use cfprior_core::rng::{normal_vector, stream, uniform, Stream};
use cfprior_core::{
    datasets, laplace_class_prior, linalg, models, Activation, AdamConfig, DataPrior, FeatureClass, FeatureKind,
    FeaturePolicy, FeatureSpec, Fidelity, GenRequest, JointCfPrior, LaplaceConfig, LinearLikelihood, LinearScm,
    Objective, ObjectiveConfig, PriorSource, RawValue, ScmNode, SplitClassifier, TrainConfig, Variant,
};
use nalgebra::{dmatrix, dvector, DMatrix, DVector};

fn verdict(n: u32, pass: bool, detail: &str, elapsed: Duration) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n}: {tag} ({detail}; {:.2} s)", elapsed.as_secs_f64());
}

fn rand_spd(rng: &mut Stream, n: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| 2.0 * uniform(rng) - 1.0);
    &b * b.transpose() + DMatrix::identity(n, n) * 0.2
}

fn rand_vec(rng: &mut Stream, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * (2.0 * uniform(rng) - 1.0))
}

fn user_prior(mu: DVector<f64>, sigma: DMatrix<f64>) -> DataPrior {
    DataPrior::new(mu, sigma, PriorSource::UserSupplied).unwrap()
}

fn criterion_01_closed_form_matches_conditioning() {
    let start = Instant::now();
    let mut rng = stream(101, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = 1 + (uniform(&mut rng) * 5.0) as usize;
        let k = 1 + (uniform(&mut rng) * n.min(2) as f64) as usize;
        let a = DMatrix::from_fn(k, n, |_, _| 2.0 * uniform(&mut rng) - 1.0);
        let lik = LinearLikelihood::new(a, rand_vec(&mut rng, k, 1.0), rand_spd(&mut rng, k)).unwrap();
        let prior = user_prior(rand_vec(&mut rng, n, 2.0), rand_spd(&mut rng, n));
        let alpha = 0.95 * uniform(&mut rng);
        let joint = JointCfPrior::build(prior, alpha, &vec![false; n]).unwrap();
        let x = rand_vec(&mut rng, n, 2.0);
        let y = rand_vec(&mut rng, k, 3.0);
        let closed = posterior_pgm2_closed_form(&lik, &joint, &x, &y).unwrap();
        let oracle = posterior_via_joint(&lik, &joint, &x, &y).unwrap();
        worst = worst.max((closed.mean() - oracle.mean()).amax()).max(linalg::max_abs_diff(closed.cov(), oracle.cov()));
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-6 && elapsed < Duration::from_secs(10);
    verdict(1, pass, &format!("max deviation {worst:.3e} over 200 instances"), elapsed);
    assert!(pass);
}

/// Self-normalized importance sampling: proposal draws with log-weights.
fn snis_moments(draws: &[f64], log_w: &[f64]) -> (f64, f64) {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mean = draws.iter().zip(&w).map(|(d, w)| d * w).sum::<f64>() / total;
    let var = draws.iter().zip(&w).map(|(d, w)| (d - mean) * (d - mean) * w).sum::<f64>() / total;
    (mean, var)
}

/// Draws `N(m, v)` proposals and weights them by `log_target − log_proposal`.
fn snis(seed: u64, m: f64, v: f64, log_target: impl Fn(f64) -> f64) -> (f64, f64) {
    let z = normal_vector(&mut stream(seed, 0), 1_000_000);
    let draws: Vec<f64> = z.iter().map(|z| m + v.sqrt() * z).collect();
    let log_w: Vec<f64> = draws.iter().map(|&d| log_target(d) + (d - m) * (d - m) / (2.0 * v)).collect();
    snis_moments(&draws, &log_w)
}

fn criterion_02_hand_values() {
    let start = Instant::now();
    let lik = LinearLikelihood::new(dmatrix![1.0], dvector![0.0], dmatrix![1.0]).unwrap();
    let y = dvector![2.0];
    let unit = || user_prior(dvector![0.0], dmatrix![1.0]);
    let log_lik = |t: f64| -0.5 * (2.0 - t) * (2.0 - t);

    let pgm1 = posterior_pgm1(&lik, &dvector![0.0], &y, &dmatrix![1.0]).unwrap();
    let pgm2_a0 = posterior_pgm2(&lik, &JointCfPrior::build(unit(), 0.0, &[false]).unwrap(), &dvector![5.0], &y).unwrap();
    let pgm2_a5 = posterior_pgm2(&lik, &JointCfPrior::build(unit(), 0.5, &[false]).unwrap(), &dvector![1.0], &y).unwrap();
    let pgm3 = posterior_pgm3(&lik, &unit(), &dvector![0.0], &y, &dmatrix![1.0]).unwrap();

    // (name, closed form, expected, SNIS proposal = p(x'|x), extra log-target term)
    type Case = (&'static str, (f64, f64), (f64, f64), (f64, f64), fn(f64) -> f64);
    let cases: [Case; 4] = [
        ("pgm1", (pgm1.mean()[0], pgm1.cov()[(0, 0)]), (1.0, 0.5), (0.0, 1.0), |_| 0.0),
        ("pgm2 a=0", (pgm2_a0.mean()[0], pgm2_a0.cov()[(0, 0)]), (1.0, 0.5), (0.0, 1.0), |_| 0.0),
        ("pgm2 a=.5", (pgm2_a5.mean()[0], pgm2_a5.cov()[(0, 0)]), (8.0 / 7.0, 3.0 / 7.0), (0.5, 0.75), |_| 0.0),
        ("pgm3", (pgm3.mean()[0], pgm3.cov()[(0, 0)]), (2.0 / 3.0, 1.0 / 3.0), (0.0, 1.0), |t| -0.5 * t * t),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (i, (name, got, want, proposal, extra)) in cases.iter().enumerate() {
        let exact = (got.0 - want.0).abs() <= 1e-9 && (got.1 - want.1).abs() <= 1e-9;
        let (m, v) = snis(200 + i as u64, proposal.0, proposal.1, |t| log_lik(t) + extra(t) - (t - proposal.0).powi(2) / (2.0 * proposal.1));
        let mc = (m - want.0).abs() <= 0.01 * want.0.abs() && (v - want.1).abs() <= 0.01 * want.1;
        pass &= exact && mc;
        detail.push(format!("{name} N({:.6}, {:.6}) snis ({m:.4}, {v:.4})", got.0, got.1));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(30);
    verdict(2, pass, &detail.join("; "), elapsed);
    assert!(pass);
}

/// Two-stage Adam: coarse steps, then a small learning rate from the result.
fn minimize(obj: &Objective, init: &DVector<f64>) -> DVector<f64> {
    let coarse = obj.minimize(init, &AdamConfig::new(0.05, 3000)).unwrap();
    obj.minimize(&coarse.solution, &AdamConfig::new(1e-3, 3000)).unwrap().solution
}

fn criterion_03_optimizer_reaches_posterior_mean() {
    let start = Instant::now();
    let mut rng = stream(303, 0);
    let n = 3;
    let a = DMatrix::from_fn(2, n, |_, _| 2.0 * uniform(&mut rng) - 1.0);
    let lik = LinearLikelihood::new(a, rand_vec(&mut rng, 2, 1.0), rand_spd(&mut rng, 2)).unwrap();
    let prior = user_prior(rand_vec(&mut rng, n, 1.0), rand_spd(&mut rng, n));
    let precision = prior.precision().unwrap();
    let x = rand_vec(&mut rng, n, 1.5);
    let y = rand_vec(&mut rng, 2, 2.0);
    let fid = Fidelity::Linear { lik: &lik, y_prime: &y };
    let reg_weight = 0.7;
    let mut worst: f64 = 0.0;
    for alpha in [0.0, 0.3, 0.7, 0.99] {
        for gamma in [0.1, 1.0, 10.0] {
            let cfg = |variant| ObjectiveConfig { variant, gamma, alpha, reg_weight, ..ObjectiveConfig::default() };

            let ours = Objective::new(fid, x.clone(), Some(&prior), cfg(Variant::Ours)).unwrap();
            let eff = LinearLikelihood::new(lik.a.clone(), lik.b.clone(), &lik.l * (gamma / (1.0 - alpha * alpha))).unwrap();
            let joint = JointCfPrior::build(prior.clone(), alpha, &[false; 3]).unwrap();
            let mean = posterior_pgm2(&eff, &joint, &x, &y).unwrap().mean().clone();
            worst = worst.max((minimize(&ours, &x) - mean).amax());

            let wachter = Objective::new(fid, x.clone(), None, cfg(Variant::Wachter)).unwrap();
            let w = DMatrix::identity(n, n) * gamma;
            let mean = posterior_pgm1(&lik, &x, &y, &w).unwrap().mean().clone();
            worst = worst.max((minimize(&wachter, &x) - mean).amax());

            let reg = Objective::new(fid, x.clone(), Some(&prior), cfg(Variant::Regularized)).unwrap();
            let p = DMatrix::from_diagonal(&precision.diagonal()) * reg_weight;
            let mean = posterior_pgm3_with_precision(&lik, &prior.mu, &p, &x, &y, &w).unwrap().mean().clone();
            worst = worst.max((minimize(&reg, &x) - mean).amax());
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-3 && elapsed < Duration::from_secs(60);
    verdict(3, pass, &format!("max l-inf gap {worst:.3e} over 36 runs"), elapsed);
    assert!(pass);
}

fn criterion_04_limit_behaviours() {
    let start = Instant::now();
    let mut rng = stream(404, 0);
    let n = 3;
    let prior = user_prior(rand_vec(&mut rng, n, 2.0), rand_spd(&mut rng, n));
    let a = DMatrix::from_fn(1, n, |_, _| 2.0 * uniform(&mut rng) - 1.0);
    let b = rand_vec(&mut rng, 1, 1.0);
    let x = rand_vec(&mut rng, n, 3.0);

    let zero_l = LinearLikelihood::new(a.clone(), b.clone(), DMatrix::zeros(1, 1)).unwrap();
    let joint0 = JointCfPrior::build(prior.clone(), 0.0, &[false; 3]).unwrap();
    let post = posterior_pgm2(&zero_l, &joint0, &x, &dvector![4.0]).unwrap();
    let d_prior = (post.mean() - &prior.mu).amax().max(linalg::max_abs_diff(post.cov(), &prior.sigma));

    let w = rand_spd(&mut rng, n);
    let pgm1 = posterior_pgm1(&zero_l, &x, &dvector![4.0], &w).unwrap();
    let d_centre = (pgm1.mean() - &x).amax();

    let lik = LinearLikelihood::new(a, b, dmatrix![1.0]).unwrap();
    let consistent = lik.predict(&x);
    let joint = JointCfPrior::build(prior.clone(), 0.995, &[false; 3]).unwrap();
    let near = posterior_pgm2(&lik, &joint, &x, &consistent).unwrap();
    let ratio = (near.mean() - &x).norm() / (&x - &prior.mu).norm();

    let elapsed = start.elapsed();
    let pass = d_prior <= 1e-8 && d_centre <= 1e-8 && ratio <= 0.01;
    verdict(
        4,
        pass,
        &format!("prior gap {d_prior:.2e}, pgm1 centre gap {d_centre:.2e}, alpha .995 relative distance {ratio:.2e}"),
        elapsed,
    );
    assert!(pass);
}

fn criterion_05_actionability() {
    let start = Instant::now();
    // x0 immutable root, x1 mutable, x2 = 1.2·x1 − 0.4·x0 + 0.3 + N(0, 0.25) non-actionable
    let truth = |x0: f64, x1: f64| 1.2 * x1 - 0.4 * x0 + 0.3;
    let m = 20_000;
    let mut rng = stream(505, 0);
    let mut rows = DMatrix::zeros(m, 3);
    for i in 0..m {
        let z = normal_vector(&mut rng, 3);
        let x0 = z[0];
        let x1 = 0.5 * x0 + z[1];
        rows[(i, 0)] = x0;
        rows[(i, 1)] = x1;
        rows[(i, 2)] = truth(x0, x1) + 0.5 * z[2];
    }
    let prior = DataPrior::fit(&rows, 1e-9).unwrap();
    let policy = FeaturePolicy::new(vec![
        FeatureClass::Immutable,
        FeatureClass::Mutable,
        FeatureClass::Nonactionable { ancestors: vec![0, 1] },
    ])
    .unwrap();
    let conditional = fit_policy_conditional(&rows, &policy, 0.0).unwrap();
    let joint = JointCfPrior::build(prior, 0.5, &policy.immutable_mask()).unwrap();
    let lik = LinearLikelihood::new(dmatrix![0.0, 1.0, 0.5], dvector![0.0], dmatrix![4.0]).unwrap();
    let y = dvector![2.5];
    let reference = dvector![0.8, -0.6, -0.9];
    let req = GenRequest::new(reference.clone(), 1, 100_000, 17);
    let source = PosteriorSource::Linear { lik: &lik, y_prime: &y, joint: &joint };
    let act = Actionability { policy: &policy, conditional: &conditional };
    let out = gen_posterior_sample(&req, source, Some(act), None).unwrap();
    let pts: Vec<&DVector<f64>> = out.counterfactuals.iter().map(|c| &c.point).collect();
    let immut_dev = pts.iter().map(|p| (p[0] - reference[0]).abs()).fold(0.0, f64::max);

    // ancestral oracle: keep the actionable draws, resample x2 from the true mechanism
    let mut noise = stream(506, 0);
    let ancestral: Vec<f64> = pts.iter().map(|p| truth(p[0], p[1]) + 0.5 * normal_vector(&mut noise, 1)[0]).collect();
    let moments = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        (mean, v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() - 1) as f64)
    };
    let x2: Vec<f64> = pts.iter().map(|p| p[2]).collect();
    let (m_rec, v_rec) = moments(&x2);
    let (m_anc, v_anc) = moments(&ancestral);
    let elapsed = start.elapsed();
    let pass = immut_dev <= 1e-6 && (m_rec - m_anc).abs() <= 0.02 && (v_rec - v_anc).abs() <= 0.02;
    verdict(
        5,
        pass,
        &format!(
            "immutable deviation {immut_dev:.2e}; non-actionable mean {m_rec:.4} vs {m_anc:.4}, variance {v_rec:.4} vs {v_anc:.4}"
        ),
        elapsed,
    );
    assert!(pass);
}

/// Largest gap between the SCM Gaussian and 10⁶ ancestral draws.
fn scm_gap(nodes: Vec<ScmNode>, seed: u64) -> f64 {
    let scm = LinearScm::new(nodes.clone()).unwrap();
    let g = scm.to_gaussian().unwrap();
    let n = nodes.len();
    let draws = 1_000_000;
    let index = |name: &str| nodes.iter().position(|m| m.name == name).unwrap();
    let parents: Vec<Vec<(usize, f64)>> = nodes.iter().map(|m| m.parents.iter().map(|(p, w)| (index(p), *w)).collect()).collect();
    let mut rng = stream(seed, 0);
    let mut sum = DVector::<f64>::zeros(n);
    let mut outer = DMatrix::<f64>::zeros(n, n);
    let mut x = DVector::<f64>::zeros(n);
    for _ in 0..draws {
        let z = normal_vector(&mut rng, n);
        for &c in scm.topological_order() {
            x[c] = nodes[c].intercept + parents[c].iter().map(|&(p, w)| w * x[p]).sum::<f64>() + nodes[c].noise_variance.sqrt() * z[c];
        }
        sum += &x;
        outer.ger(1.0, &x, &x, 1.0);
    }
    let mean = &sum / draws as f64;
    let cov = (&outer - &mean * mean.transpose() * draws as f64) / (draws - 1) as f64;
    (mean - &g.mu).amax().max(linalg::max_abs_diff(&cov, &g.sigma))
}

fn criterion_06_scm_prior() {
    let start = Instant::now();
    let node = |name: &str, parents: &[(&str, f64)], intercept: f64, noise: f64| ScmNode {
        name: name.into(),
        parents: parents.iter().map(|(p, w)| (p.to_string(), *w)).collect(),
        intercept,
        noise_variance: noise,
    };
    let chain = vec![node("C", &[], 0.0, 1.0), node("E1", &[("C", 1.0)], 0.0, 1.0), node("E2", &[("E1", 1.0)], 0.0, 1.0)];
    let g = LinearScm::new(chain.clone()).unwrap().to_gaussian().unwrap();
    let chain_exact = (g.sigma[(2, 2)] - 3.0).abs() < 1e-12 && (g.sigma[(0, 2)] - 1.0).abs() < 1e-12;
    let mut worst = scm_gap(chain, 600);

    let mut rng = stream(601, 0);
    for d in 0..50u64 {
        let n = 2 + (uniform(&mut rng) * 3.0) as usize;
        let names: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        // random DAG over a shuffled declaration order
        let mut nodes = Vec::new();
        for i in 0..n {
            let mut parents = Vec::new();
            for name in names.iter().take(i) {
                if uniform(&mut rng) < 0.6 {
                    parents.push((name.clone(), 1.2 * uniform(&mut rng) - 0.6));
                }
            }
            nodes.push(ScmNode {
                name: names[i].clone(),
                parents,
                intercept: 2.0 * uniform(&mut rng) - 1.0,
                noise_variance: 0.1 + 0.4 * uniform(&mut rng),
            });
        }
        nodes.reverse();
        worst = worst.max(scm_gap(nodes, 700 + d));
    }
    let elapsed = start.elapsed();
    let pass = chain_exact && worst <= 0.02;
    verdict(6, pass, &format!("chain exact {chain_exact}; max moment gap {worst:.4} over chain + 50 DAGs"), elapsed);
    assert!(pass);
}

fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    for i in 0..x.len() {
        let h = 1e-5 * (1.0 + x[i].abs());
        let (mut up, mut down) = (x.clone(), x.clone());
        up[i] += h;
        down[i] -= h;
        g[i] = (f(&up) - f(&down)) / (2.0 * h);
    }
    g
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-8)
}

fn criterion_07_gradient_integrity() {
    let start = Instant::now();
    let mut rng = stream(707, 0);
    let mut worst = [0.0_f64; 4];
    for t in 0..100u64 {
        let n = 2 + (uniform(&mut rng) * 4.0) as usize;
        let clf = SplitClassifier::init(n, &[8, 5], Activation::Tanh, 3, t).unwrap();
        let target = t as usize % 3;
        let x = rand_vec(&mut rng, n, 1.5);
        let xt = rand_vec(&mut rng, n, 1.5);
        let (_, g) = clf.nll_input(&xt, target);
        worst[0] = worst[0].max(rel_err(&g, &fd_gradient(|z| clf.nll_input(z, target).0, &xt)));

        let prior = user_prior(rand_vec(&mut rng, n, 1.0), rand_spd(&mut rng, n));
        let fid = Fidelity::Classifier { clf: &clf, target };
        for (slot, variant) in [(1, Variant::Wachter), (2, Variant::Ours), (3, Variant::Regularized)] {
            let cfg = ObjectiveConfig {
                variant,
                gamma: 0.1 + 2.0 * uniform(&mut rng),
                alpha: 0.9 * uniform(&mut rng),
                reg_weight: 0.1 + uniform(&mut rng),
                ..ObjectiveConfig::default()
            };
            let obj = Objective::new(fid, x.clone(), Some(&prior), cfg).unwrap();
            let (_, g) = obj.eval(&xt);
            worst[slot] = worst[slot].max(rel_err(&g, &fd_gradient(|z| obj.eval(z).0, &xt)));
        }
    }
    let elapsed = start.elapsed();
    let pass = worst.iter().all(|&w| w <= 1e-4);
    verdict(
        7,
        pass,
        &format!(
            "max relative error: classifier {:.2e}, wachter {:.2e}, ours {:.2e}, regularized {:.2e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
        elapsed,
    );
    assert!(pass);
}

/// `P(X ≥ wins)` for `X ~ Binomial(trials, 1/2)`.
fn sign_test_p(wins: usize, trials: usize) -> f64 {
    let mut p = 0.0;
    for k in wins..=trials {
        let mut c = 1.0;
        for j in 0..k {
            c *= (trials - j) as f64 / (j + 1) as f64;
        }
        p += c;
    }
    p / 2f64.powi(trials as i32)
}

fn directional_config(seed: u64) -> RunConfig {
    let mut wachter = MethodConfig::new(MethodKind::Wachter);
    wachter.gamma = vec![0.01, 0.1, 0.3, 1.0, 3.0, 10.0];
    let mut ours = MethodConfig::new(MethodKind::Ours);
    ours.alpha = vec![0.0, 0.5, 0.9];
    ours.gamma = vec![0.3, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0];
    RunConfig {
        seed: Some(seed),
        data: DataConfig::Anisotropic { per_class: 250 },
        model: ModelConfig::default(),
        bench: BenchConfig { references: 100, held_out: 30, ..BenchConfig::default() },
        methods: vec![wachter, ours],
    }
}

fn criterion_08_directional_ynn() {
    let start = Instant::now();
    let seeds = 20;
    let (mut wins, mut ties) = (0, 0);
    let (mut ynn_w, mut ynn_o, mut l2_w, mut l2_o) = (0.0, 0.0, 0.0, 0.0);
    for seed in 0..seeds {
        let out = run_benchmark(&directional_config(seed), None).unwrap();
        let (w, o) = (&out.methods[0].report, &out.methods[1].report);
        assert_eq!((w.n, o.n), (100, 100));
        if o.ynn > w.ynn {
            wins += 1;
        } else if o.ynn == w.ynn {
            ties += 1;
        }
        ynn_w += w.ynn / seeds as f64;
        ynn_o += o.ynn / seeds as f64;
        l2_w += w.l2 / seeds as f64;
        l2_o += o.l2 / seeds as f64;
    }
    let p = sign_test_p(wins, seeds as usize - ties);
    let elapsed = start.elapsed();
    let pass = ynn_o > ynn_w && p < 0.05 && elapsed < Duration::from_secs(300);
    verdict(
        8,
        pass,
        &format!(
            "mean yNN ours {ynn_o:.4} vs wachter {ynn_w:.4}; ours wins {wins}/{seeds} (ties {ties}), sign test p {p:.4}; mean l2 ours {l2_o:.4} vs wachter {l2_w:.4}"
        ),
        elapsed,
    );
    assert!(pass);
}

fn criterion_09_codec_round_trip() {
    let start = Instant::now();
    let mut specs = vec![
        FeatureSpec::new("c", FeatureKind::Continuous),
        FeatureSpec::new("l", FeatureKind::LogContinuous),
        FeatureSpec::new("p", FeatureKind::PixelLogit { eps: 0.01 }),
        FeatureSpec::new("k", FeatureKind::Categorical { levels: vec!["a".into(), "b".into(), "c".into(), "d".into()], temperature: 0.01 }),
        FeatureSpec::new("b", FeatureKind::Binary),
    ];
    specs[0].immutable = true;
    let schema = FeatureSchema::new(specs).unwrap();
    let mut rng = stream(909, 0);
    let (mut worst, mut discrete_ok) = (0.0_f64, true);
    for _ in 0..10_000 {
        let u = |r: &mut Stream| uniform(r);
        let row = vec![
            RawValue::Number(20.0 * u(&mut rng) - 10.0),
            RawValue::Number((12.0 * u(&mut rng) - 6.0).exp()),
            RawValue::Number(0.01 + 0.99 * (1.0 - u(&mut rng))),
            RawValue::Category((u(&mut rng) * 4.0) as usize),
            RawValue::Number(if u(&mut rng) < 0.5 { 0.0 } else { 1.0 }),
        ];
        let back = schema.decode_row(&schema.encode_row(&row).unwrap()).unwrap();
        for (j, (a, b)) in row.iter().zip(&back).enumerate() {
            match (a, b) {
                (RawValue::Number(a), RawValue::Number(b)) if j < 3 => worst = worst.max((a - b).abs() / a.abs().max(1.0)),
                _ => discrete_ok &= a == b,
            }
        }
    }
    let pixel = FeatureSchema::new(vec![FeatureSpec::new("p", FeatureKind::PixelLogit { eps: 0.01 })]).unwrap();
    let z51 = pixel.encode_row(&[RawValue::Number(0.51)]).unwrap()[0];
    let z50 = pixel.encode_row(&[RawValue::Number(0.5)]).unwrap()[0];
    let spots = z51.abs() < 1e-12 && (z50 - (0.49f64 / 0.51).ln()).abs() < 1e-12 && (z50 + 0.0400).abs() < 1e-4;
    let elapsed = start.elapsed();
    let pass = worst <= 1e-9 && discrete_ok && spots;
    verdict(
        9,
        pass,
        &format!("max continuous error {worst:.2e}, discrete exact {discrete_ok}, pixel spots ({z51:.2e}, {z50:.6})"),
        elapsed,
    );
    assert!(pass);
}

fn criterion_10_laplace_pipeline() {
    let start = Instant::now();
    let data = datasets::two_blobs(200, 4.0, 10);
    let init = SplitClassifier::init(2, &[16], Activation::Tanh, 2, 10).unwrap();
    let clf = models::train(&init, &data.rows, &data.labels, &TrainConfig::default()).unwrap().model;
    let prior = DataPrior::fit(&data.rows, 1e-6).unwrap();
    let cp = laplace_class_prior(&clf, &data.rows, &prior, 1, &LaplaceConfig { seed: 10, ..LaplaceConfig::default() }).unwrap();
    let mode = cp.g.mean().clone();

    let g = prior.gaussian().unwrap();
    let res = 401;
    let step = 10.0 / (res - 1) as f64;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..res {
        for j in 0..res {
            let p = dvector![-5.0 + step * i as f64, -5.0 + step * j as f64];
            let v = cp.surrogate.log_probs(&p)[1] + g.log_pdf(&p).unwrap();
            if v > best.0 {
                best = (v, p[0], p[1]);
            }
        }
    }
    let gap = (mode[0] - best.1).abs().max((mode[1] - best.2).abs());
    let elapsed = start.elapsed();
    let pass = cp.mode_probability >= 0.9 && gap <= step && elapsed < Duration::from_secs(60);
    verdict(
        10,
        pass,
        &format!(
            "mode ({:.4}, {:.4}) p {:.4}; grid argmax ({:.4}, {:.4}); gap {gap:.4} vs cell {step}",
            mode[0], mode[1], cp.mode_probability, best.1, best.2
        ),
        elapsed,
    );
    assert!(pass);
}

fn criterion_11_determinism_across_threads() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bench.toml");
    fs::write(
        &config,
        r#"
seed = 11

[data]
source = "anisotropic"
per_class = 80

[model]
hidden = [12]
train = { steps = 300 }

[bench]
references = 12
held_out = 6
count = 2

[[methods]]
kind = "wachter"
gamma = [0.1, 1.0]
lambda_div = 0.1
steps = 300

[[methods]]
kind = "ours"
alpha = [0.5, 0.9]
gamma = [1.0, 10.0]
lambda_div = 0.1
steps = 300

[[methods]]
kind = "posterior-sample"
alpha = [0.5]
restarts = 3

[[methods]]
kind = "growing-spheres"
spheres = { per_shell = 50 }

[[methods]]
kind = "face"
face_k = [5, 10]
"#,
    )
    .unwrap();
    let files = ["report.csv", "report.txt", "records.csv", "failures.csv", "grid.csv"];
    let mut outputs: Vec<(usize, Vec<Vec<u8>>)> = Vec::new();
    for threads in [1, 4, 8] {
        for run in 0..2 {
            let out = dir.path().join(format!("t{threads}-{run}"));
            cmd_bench(&config, &BenchOverrides::default(), Some(threads), &out).unwrap();
            outputs.push((threads, files.iter().map(|f| fs::read(out.join(f)).unwrap()).collect()));
        }
    }
    let identical = outputs.iter().all(|o| o.1 == outputs[0].1);
    let nonempty = outputs[0].1[2].len() > 100;
    let elapsed = start.elapsed();
    let pass = identical && nonempty;
    verdict(11, pass, &format!("6 runs (2 each at 1, 4, 8 threads) byte-identical: {identical}"), elapsed);
    assert!(pass);
}

fn main() -> ExitCode {
    let criteria: [(&str, fn()); 11] = [
        ("criterion_01_closed_form_matches_conditioning", criterion_01_closed_form_matches_conditioning),
        ("criterion_02_hand_values", criterion_02_hand_values),
        ("criterion_03_optimizer_reaches_posterior_mean", criterion_03_optimizer_reaches_posterior_mean),
        ("criterion_04_limit_behaviours", criterion_04_limit_behaviours),
        ("criterion_05_actionability", criterion_05_actionability),
        ("criterion_06_scm_prior", criterion_06_scm_prior),
        ("criterion_07_gradient_integrity", criterion_07_gradient_integrity),
        ("criterion_08_directional_ynn", criterion_08_directional_ynn),
        ("criterion_09_codec_round_trip", criterion_09_codec_round_trip),
        ("criterion_10_laplace_pipeline", criterion_10_laplace_pipeline),
        ("criterion_11_determinism_across_threads", criterion_11_determinism_across_threads),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let (mut run, mut failed) = (0, Vec::new());
    for (name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        run += 1;
        if panic::catch_unwind(f).is_err() {
            failed.push(name);
        }
    }
    println!("acceptance: {} of {run} criteria passed", run - failed.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
