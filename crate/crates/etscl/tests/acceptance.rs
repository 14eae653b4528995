//! Release gate: every acceptance check runs in one process and prints a
//! PASS/FAIL line. Exits non-zero if any check fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use etscl_core::contrastive::{supcon_gradient, supcon_loss, supcon_objective, supcon_objective_gradient, EmbeddingBatch, Encoder};
use etscl_core::evidence::{combine, DirichletOpinion, EvidenceVector, MassSet};
use etscl_core::frangi::{frangi_filter, gaussian_second_derivatives, vesselness_at_scale, FrangiParams, GrayImage, Polarity};
use etscl_core::loss::{
    kl_to_uniform, loss_gradient_wrt_evidence, mse_term, sample_loss_gradient_with, sample_loss_with, KlTarget, OneHot,
};
use etscl_core::metrics::{quadratic_weighted_kappa, ConfusionMatrix};
use etscl_core::nn::{fused_branch_gradients, Activation, Dense, EvidentialHeads, Mlp};
use etscl_core::pipeline::{evaluate, train_pipeline, PipelineConfig};
use etscl_core::synth::{generate, generate_tube_image, split, DatasetSpec};
use etscl_core::Modality;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

// ---------------------------------------------------------------------------
// Random fixtures

fn random_mass(rng: &mut impl Rng, k: usize) -> MassSet {
    let mut raw: Vec<f64> = (0..=k).map(|_| rng.random_range(0.0..1.0)).collect();
    if rng.random_bool(0.2) {
        raw[rng.random_range(0..k)] = 0.0;
    }
    raw[k] += 1e-3;
    let total: f64 = raw.iter().sum();
    let b: Vec<f64> = raw[..k].iter().map(|v| v / total).collect();
    let u = 1.0 - b.iter().sum::<f64>();
    MassSet::new(b, u).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn mass_diff(a: &MassSet, b: &MassSet) -> f64 {
    max_abs_diff(a.belief(), b.belief()).max((a.uncertainty() - b.uncertainty()).abs())
}

/// ‖a − n‖ / max(‖a‖, ‖n‖), with a floor on the denominator for vanishing gradients.
fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-8)
}

fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Evidence algebra

fn evidence_algebra() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut closure, mut comm, mut assoc, mut round) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let k = rng.random_range(2..=6);
        let (a, b, c) = (random_mass(&mut rng, k), random_mass(&mut rng, k), random_mass(&mut rng, k));
        let ab = combine(&a, &b).unwrap();
        let ba = combine(&b, &a).unwrap();
        let left = combine(&ab, &c).unwrap();
        let right = combine(&a, &combine(&b, &c).unwrap()).unwrap();
        for m in [&ab, &left, &right] {
            closure = closure.max((m.belief().iter().sum::<f64>() + m.uncertainty() - 1.0).abs());
        }
        comm = comm.max(mass_diff(&ab, &ba));
        assoc = assoc.max(mass_diff(&left, &right));
        let vac = MassSet::vacuous(k).unwrap();
        ensure(combine(&a, &vac).unwrap() == a && combine(&vac, &a).unwrap() == a, || "vacuous mass is not an exact identity".into())?;
        round = round.max(mass_diff(&a.to_opinion().unwrap().to_mass(), &a));
        let o = DirichletOpinion::new((0..k).map(|_| rng.random_range(1.0..20.0)).collect()).unwrap();
        round = round.max(max_abs_diff(o.to_mass().to_opinion().unwrap().alpha(), o.alpha()) / o.strength());
    }
    let elapsed = start.elapsed();
    ensure(closure <= 1e-9, || format!("closure error {closure:e}"))?;
    ensure(comm <= 1e-9, || format!("commutativity error {comm:e}"))?;
    ensure(assoc <= 1e-9, || format!("associativity error {assoc:e}"))?;
    ensure(round <= 1e-9, || format!("roundtrip error {round:e}"))?;
    within_time(elapsed, Duration::from_secs(1))?;
    Ok(format!("closure {closure:.1e}, commutativity {comm:.1e}, associativity {assoc:.1e}, roundtrip {round:.1e}, {elapsed:.2?}"))
}

fn fusion_hand_example() -> Outcome {
    let m1 = MassSet::new(vec![0.6, 0.2, 0.0], 0.2).unwrap();
    let m2 = MassSet::new(vec![0.5, 0.0, 0.2], 0.3).unwrap();
    let f = combine(&m1, &m2).unwrap();
    // K' = 0.6·0 + 0.6·0.2 + 0.2·0.5 + 0.2·0.2 = 0.26
    let expected = [0.58 / 0.74, 0.06 / 0.74, 0.04 / 0.74];
    let err = max_abs_diff(f.belief(), &expected).max((f.uncertainty() - 0.06 / 0.74).abs());
    ensure(err <= 1e-5, || format!("error {err:e}"))?;
    ensure((f.belief()[0] - 0.78378).abs() < 1e-5 && (f.uncertainty() - 0.08108).abs() < 1e-5, || "published digits differ".into())?;
    Ok(format!("b = {:.5?}, u = {:.5}", f.belief(), f.uncertainty()))
}

// ---------------------------------------------------------------------------
// Loss oracles

/// Lanczos log-gamma (g = 7, n = 9), independent of the library's series.
fn lanczos_ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Gauss-Legendre nodes and weights on [0, 1].
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let step = p1 / dp;
                x -= step;
                if step.abs() < 1e-15 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            ((x + 1.0) / 2.0, w / 2.0)
        })
        .collect()
}

/// KL(Dir(α) ‖ Dir(1,1,1)) by quadrature over the triangle, with p = (s, (1−s)t, (1−s)(1−t)).
fn kl_by_quadrature(alpha: [f64; 3], rule: &[(f64, f64)]) -> f64 {
    let s_total: f64 = alpha.iter().sum();
    let log_norm = lanczos_ln_gamma(s_total) - alpha.iter().map(|a| lanczos_ln_gamma(*a)).sum::<f64>();
    let log_uniform = 2.0f64.ln();
    let mut total = 0.0;
    for &(s, ws) in rule {
        for &(t, wt) in rule {
            let p = [s, (1.0 - s) * t, (1.0 - s) * (1.0 - t)];
            let log_f = log_norm + p.iter().zip(&alpha).map(|(p, a)| (a - 1.0) * p.ln()).sum::<f64>();
            total += ws * wt * (1.0 - s) * log_f.exp() * (log_f - log_uniform);
        }
    }
    total
}

fn loss_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst_z = 0.0f64;
    for _ in 0..50 {
        let k = rng.random_range(2..=5);
        let alpha: Vec<f64> = (0..k).map(|_| rng.random_range(1.0..10.0)).collect();
        let y = OneHot::new(rng.random_range(0..k), k).unwrap();
        let closed = mse_term(&DirichletOpinion::new(alpha.clone()).unwrap(), &y).unwrap();
        let gammas: Vec<Gamma<f64>> = alpha.iter().map(|a| Gamma::new(*a, 1.0).unwrap()).collect();
        let n = 1_000_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        let mut draw = vec![0.0; k];
        for _ in 0..n {
            for (d, g) in draw.iter_mut().zip(&gammas) {
                *d = g.sample(&mut rng);
            }
            let s: f64 = draw.iter().sum();
            let v: f64 = draw.iter().enumerate().map(|(j, d)| (y.get(j) - d / s).powi(2)).sum();
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / (n as f64 - 1.0)).sqrt();
        worst_z = worst_z.max((mean - closed).abs() / se);
    }
    ensure(worst_z < 3.0, || format!("Monte Carlo deviation {worst_z:.2} standard errors"))?;

    let rule = gauss_legendre(256);
    let mut cases = vec![[1.0, 1.0, 1.0], [10.0, 10.0, 10.0], [1.0, 1.0, 10.0], [2.0, 1.0, 1.0], [10.0, 1.0, 5.5]];
    for _ in 0..25 {
        cases.push([rng.random_range(1.0..=10.0), rng.random_range(1.0..=10.0), rng.random_range(1.0..=10.0)]);
    }
    let mut worst_kl = 0.0f64;
    for alpha in cases {
        let closed = kl_to_uniform(&DirichletOpinion::new(alpha.to_vec()).unwrap());
        worst_kl = worst_kl.max((closed - kl_by_quadrature(alpha, &rule)).abs());
    }
    let elapsed = start.elapsed();
    ensure(worst_kl < 1e-4, || format!("KL quadrature error {worst_kl:e}"))?;
    within_time(elapsed, Duration::from_secs(120))?;
    Ok(format!("worst MSE deviation {worst_z:.2} SE over 50 cases, worst KL error {worst_kl:.1e}, {elapsed:.2?}"))
}

// ---------------------------------------------------------------------------
// Gradient suite

fn random_mlp(rng: &mut impl Rng, sizes: &[usize], acts: &[Activation]) -> Mlp {
    let layers = sizes
        .windows(2)
        .zip(acts)
        .map(|(w, a)| {
            let weights = (0..w[0] * w[1]).map(|_| rng.random_range(-1.0..1.0)).collect();
            let bias = (0..w[1]).map(|_| rng.random_range(-0.5..0.5)).collect();
            Dense::new(w[0], w[1], weights, bias, *a).unwrap()
        })
        .collect();
    Mlp::new(layers).unwrap()
}

fn flatten(mlp: &Mlp) -> Vec<f64> {
    mlp.layers().iter().flat_map(|l| l.weights().iter().chain(l.bias()).copied()).collect()
}

fn unflatten(template: &Mlp, params: &[f64]) -> Mlp {
    let mut at = 0;
    let layers = template
        .layers()
        .iter()
        .map(|l| {
            let nw = l.weights().len();
            let w = params[at..at + nw].to_vec();
            let b = params[at + nw..at + nw + l.n_out()].to_vec();
            at += nw + l.n_out();
            Dense::new(l.n_in(), l.n_out(), w, b, l.activation()).unwrap()
        })
        .collect();
    Mlp::new(layers).unwrap()
}

fn flatten_grads(g: &etscl_core::nn::Gradients) -> Vec<f64> {
    g.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
}

fn pick_activation(rng: &mut impl Rng) -> Activation {
    [Activation::Relu, Activation::Softplus, Activation::Identity][rng.random_range(0..3)]
}

fn contrastive_views(rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let n = rng.random_range(2..=5);
    let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let labels = classes.iter().flat_map(|c| [*c, *c]).collect();
    let origin = (0..n).flat_map(|i| [i, i]).collect();
    (labels, origin)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let h = 1e-6;
    let mut worst = [0.0f64; 4];

    for _ in 0..100 {
        // contrastive objective with respect to the vectors, and the batch form on unit vectors
        let (labels, origin) = contrastive_views(&mut rng);
        let d = rng.random_range(2..=6);
        let tau = rng.random_range(0.1..1.0);
        let z: Vec<Vec<f64>> = labels.iter().map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let flat: Vec<f64> = z.iter().flatten().copied().collect();
        let numeric = central_difference(&flat, h, |p| {
            let zz: Vec<Vec<f64>> = p.chunks(d).map(<[f64]>::to_vec).collect();
            supcon_objective(&zz, &labels, tau).unwrap()
        });
        let analytic: Vec<f64> = supcon_objective_gradient(&z, &labels, tau).unwrap().concat();
        worst[0] = worst[0].max(rel_error(&analytic, &numeric));
        let unit: Vec<Vec<f64>> = z
            .iter()
            .map(|v| {
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| x / n).collect()
            })
            .collect();
        let batch = EmbeddingBatch::new(unit.clone(), labels.clone(), origin).unwrap();
        let direct = supcon_objective_gradient(&unit, &labels, tau).unwrap().concat();
        worst[0] = worst[0].max(rel_error(&supcon_gradient(&batch, tau).unwrap().concat(), &direct));

        // encoder parameters through the normalization
        let input = rng.random_range(2..=4);
        let net = random_mlp(&mut rng, &[input, 5, 4, 3], &[Activation::Relu, Activation::Relu, Activation::Identity]);
        let enc = Encoder::new(net, 2, true).unwrap();
        let xs: Vec<Vec<f64>> = labels.iter().map(|_| (0..input).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let loss_of = |e: &Encoder| {
            let zz: Vec<Vec<f64>> = xs.iter().map(|x| e.forward(x).unwrap().0).collect();
            supcon_objective(&zz, &labels, tau).unwrap()
        };
        let params = flatten(enc.net());
        let numeric = central_difference(&params, h, |p| loss_of(&Encoder::new(unflatten(enc.net(), p), 2, true).unwrap()));
        let fwd: Vec<_> = xs.iter().map(|x| enc.forward(x).unwrap()).collect();
        let zz: Vec<Vec<f64>> = fwd.iter().map(|(z, _)| z.clone()).collect();
        let dz = supcon_objective_gradient(&zz, &labels, tau).unwrap();
        let mut total = etscl_core::nn::Gradients::zeros_like(enc.net());
        for ((_, cache), g) in fwd.iter().zip(&dz) {
            total.add_assign(&enc.backward(cache, g).unwrap());
        }
        worst[0] = worst[0].max(rel_error(&flatten_grads(&total), &numeric));

        // evidential loss with respect to evidence
        let k = rng.random_range(2..=5);
        let e: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..10.0)).collect();
        let y = OneHot::new(rng.random_range(0..k), k).unwrap();
        let lambda = rng.random_range(0.0..=1.0);
        let loss_at = |p: &[f64], t: KlTarget| {
            sample_loss_with(&DirichletOpinion::from_evidence(&EvidenceVector::new(p.to_vec()).unwrap()), &y, lambda, t).unwrap()
        };
        let ev = EvidenceVector::new(e.clone()).unwrap();
        let analytic = loss_gradient_wrt_evidence(&ev, &y, lambda).unwrap();
        worst[1] = worst[1].max(rel_error(&analytic, &central_difference(&e, h, |p| loss_at(p, KlTarget::Adjusted))));
        let raw = sample_loss_gradient_with(&DirichletOpinion::from_evidence(&ev), &y, lambda, KlTarget::Raw).unwrap();
        worst[1] = worst[1].max(rel_error(&raw, &central_difference(&e, h, |p| loss_at(p, KlTarget::Raw))));

        // network backward: parameters and input
        let depth = rng.random_range(1..=3);
        let sizes: Vec<usize> = (0..=depth).map(|_| rng.random_range(2..=6)).collect();
        let acts: Vec<Activation> = (0..depth).map(|_| pick_activation(&mut rng)).collect();
        let net = random_mlp(&mut rng, &sizes, &acts);
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
        let up: Vec<f64> = (0..sizes[depth]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dot = |v: Vec<f64>| v.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
        let (_, cache) = net.forward(&x).unwrap();
        let (grads, dx) = net.backward(&cache, &up).unwrap();
        let params = flatten(&net);
        let numeric = central_difference(&params, h, |p| dot(unflatten(&net, p).predict(&x).unwrap()));
        worst[2] = worst[2].max(rel_error(&flatten_grads(&grads), &numeric));
        worst[2] = worst[2].max(rel_error(&dx, &central_difference(&x, h, |p| dot(net.predict(p).unwrap()))));

        // full chain: head parameters -> evidence -> opinions -> masses -> fusion -> fused loss
        let k = rng.random_range(2..=4);
        let hidden = rng.random_bool(0.5);
        let heads: Vec<Mlp> = (0..3)
            .map(|_| {
                let d = rng.random_range(2..=5);
                if hidden {
                    random_mlp(&mut rng, &[d, 4, k], &[Activation::Relu, Activation::Softplus])
                } else {
                    random_mlp(&mut rng, &[d, k], &[Activation::Softplus])
                }
            })
            .collect();
        let inputs: Vec<Vec<f64>> = heads.iter().map(|m| (0..m.input_dim()).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
        let y = OneHot::new(rng.random_range(0..k), k).unwrap();
        let lambda = rng.random_range(0.0..=1.0);
        let target = if rng.random_bool(0.5) { KlTarget::Adjusted } else { KlTarget::Raw };
        let total_loss = |hs: &[Mlp]| {
            let set = EvidentialHeads::new([hs[0].clone(), hs[1].clone(), hs[2].clone()]).unwrap();
            let f = set.forward_sample([&inputs[0], &inputs[1], &inputs[2]]).unwrap();
            f.opinions.iter().map(|o| sample_loss_with(o, &y, lambda, target).unwrap()).sum::<f64>()
                + sample_loss_with(&f.fused, &y, lambda, target).unwrap()
        };
        let fwd: Vec<_> = heads.iter().zip(&inputs).map(|(m, x)| m.forward(x).unwrap()).collect();
        let evidence: Vec<EvidenceVector> = fwd.iter().map(|(e, _)| EvidenceVector::new(e.clone()).unwrap()).collect();
        let (_, upstream) = fused_branch_gradients(&evidence, &y, lambda, target).unwrap();
        let mut analytic = Vec::new();
        for m in 0..3 {
            let own = sample_loss_gradient_with(&DirichletOpinion::from_evidence(&evidence[m]), &y, lambda, target).unwrap();
            let g: Vec<f64> = upstream[m].iter().zip(&own).map(|(a, b)| a + b).collect();
            analytic.extend(flatten_grads(&heads[m].backward(&fwd[m].1, &g).unwrap().0));
        }
        let sizes: Vec<usize> = heads.iter().map(|m| flatten(m).len()).collect();
        let params: Vec<f64> = heads.iter().flat_map(flatten).collect();
        let numeric = central_difference(&params, h, |p| {
            let (a, rest) = p.split_at(sizes[0]);
            let (b, c) = rest.split_at(sizes[1]);
            total_loss(&[unflatten(&heads[0], a), unflatten(&heads[1], b), unflatten(&heads[2], c)])
        });
        worst[3] = worst[3].max(rel_error(&analytic, &numeric));
    }
    let elapsed = start.elapsed();
    let names = ["contrastive", "evidential loss", "network backward", "fusion chain"];
    for (name, w) in names.iter().zip(&worst) {
        ensure(*w < 1e-4, || format!("{name} relative error {w:e}"))?;
    }
    within_time(elapsed, Duration::from_secs(60))?;
    Ok(format!(
        "worst relative error: contrastive {:.1e}, evidential {:.1e}, network {:.1e}, fusion chain {:.1e}; {elapsed:.2?}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

fn contrastive_hand_example() -> Outcome {
    let e1 = vec![1.0, 0.0];
    let e2 = vec![0.0, 1.0];
    let batch = EmbeddingBatch::new(vec![e1.clone(), e1, e2.clone(), e2], vec![0, 0, 1, 1], vec![0, 0, 1, 1]).unwrap();
    let value = supcon_loss(&batch, 1.0).unwrap();
    // each anchor: ln(e + 2) − 1
    let expected = 4.0 * ((1f64.exp() + 2.0).ln() - 1.0);
    ensure((value - expected).abs() < 1e-12 && (value - 2.20577).abs() < 1e-5, || format!("value {value}"))?;
    Ok(format!("loss {value:.6}"))
}

// ---------------------------------------------------------------------------
// Vesselness

fn centerline_mean(field: &[f64], tube: &etscl_core::synth::TubeImage, width: usize, radius: f64) -> f64 {
    let height = field.len() / width;
    let (cx, cy) = ((width / 2) as f64, (height / 2) as f64);
    let picked: Vec<f64> = (0..field.len())
        .filter(|&i| {
            let (x, y) = ((i % width) as f64, (i / width) as f64);
            tube.centerline[i] && ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() <= radius
        })
        .map(|i| field[i])
        .collect();
    picked.iter().sum::<f64>() / picked.len() as f64
}

fn vesselness_suite() -> Outcome {
    let start = Instant::now();
    let params = FrangiParams::default();
    let size = 64;
    let flat = frangi_filter(&GrayImage::filled(size, size, 0.8).unwrap(), &params).unwrap();
    ensure(flat.data().iter().all(|v| *v == 0.0), || "flat image gives a non-zero response".into())?;

    let mut report = Vec::new();
    for (tube_width, expected_sigma) in [(2.0, 1.0), (4.0, 2.0), (6.0, 3.0)] {
        let tube = generate_tube_image(size, size, tube_width, 0.0, 0.5, Polarity::DarkOnBright).unwrap();
        let v = frangi_filter(&tube.image, &params).unwrap();
        let center = centerline_mean(v.data(), &tube, size, f64::INFINITY);
        let far: Vec<f64> = v.data().iter().zip(&tube.distance).filter(|(_, d)| **d >= 20.0).map(|(v, _)| *v).collect();
        let far_mean = far.iter().sum::<f64>() / far.len() as f64;
        ensure(center >= 10.0 * far_mean && center > 0.0, || format!("width {tube_width}: centerline {center} vs background {far_mean}"))?;
        let per_scale: Vec<f64> = params
            .scales
            .iter()
            .map(|s| {
                let single = vesselness_at_scale(&gaussian_second_derivatives(&tube.image, *s).unwrap(), &params).unwrap();
                centerline_mean(single.data(), &tube, size, f64::INFINITY)
            })
            .collect();
        let best = params.scales[per_scale.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0];
        ensure(best == expected_sigma, || format!("width {tube_width}: best scale {best}, expected {expected_sigma}"))?;
        report.push(format!("width {tube_width}: centerline {center:.3} vs background {far_mean:.1e}, best sigma {best}"));
    }

    let responses: Vec<f64> = [0.0, 30.0, 45.0, 60.0, 90.0]
        .iter()
        .map(|angle| {
            let tube = generate_tube_image(size, size, 4.0, *angle, 0.5, Polarity::DarkOnBright).unwrap();
            centerline_mean(frangi_filter(&tube.image, &params).unwrap().data(), &tube, size, 16.0)
        })
        .collect();
    let hi = responses.iter().copied().fold(f64::MIN, f64::max);
    let lo = responses.iter().copied().fold(f64::MAX, f64::min);
    let variation = (hi - lo) / hi;
    ensure(variation < 0.2, || format!("orientation variation {variation:.3} over {responses:?}"))?;
    let elapsed = start.elapsed();
    within_time(elapsed, Duration::from_secs(10))?;
    Ok(format!("{}; orientation variation {variation:.3}; {elapsed:.2?}", report.join(", ")))
}

// ---------------------------------------------------------------------------
// Benchmark run

#[derive(Debug, PartialEq)]
struct BenchmarkNumbers {
    kappas: Vec<Option<f64>>,
    accuracies: Vec<f64>,
    u_clean: Option<f64>,
    u_conflict: Option<f64>,
    encoder_losses: Vec<Vec<f64>>,
    classifier_totals: Vec<f64>,
    evaluation: etscl_core::pipeline::Evaluation,
}

const BRANCH_SETS: [&[Modality]; 5] = [
    &[Modality::Cfp],
    &[Modality::Oct],
    &[Modality::Vessel],
    &[Modality::Cfp, Modality::Oct],
    &[Modality::Cfp, Modality::Oct, Modality::Vessel],
];

fn run_benchmark() -> BenchmarkNumbers {
    let spec = DatasetSpec { seed: 1, ..DatasetSpec::default() };
    assert_eq!((spec.n_samples, spec.n_classes, spec.separability, spec.conflict_rate), (300, 3, [2.0, 1.5, 1.0], 0.1));
    let (train, test) = split(&generate(&spec).unwrap(), 2.0 / 3.0, spec.seed).unwrap();
    let config = PipelineConfig::with_seed(3, spec.seed);
    let trained = train_pipeline(&train, &config).unwrap();
    let evaluation = evaluate(&trained.heads, &trained.encoders, &test).unwrap();
    let subsets: Vec<_> = BRANCH_SETS.iter().map(|s| evaluation.subset_metrics(s).unwrap()).collect();
    let (u_clean, u_conflict) = evaluation.uncertainty_by_conflict();
    BenchmarkNumbers {
        kappas: subsets.iter().map(|m| m.kappa).collect(),
        accuracies: subsets.iter().map(|m| m.accuracy).collect(),
        u_clean,
        u_conflict,
        encoder_losses: trained.encoder_losses.to_vec(),
        classifier_totals: trained.classifier_history.iter().map(|r| r.total).collect(),
        evaluation,
    }
}

fn benchmark_checks() -> Vec<(&'static str, Outcome)> {
    let start = Instant::now();
    let first = run_benchmark();
    let elapsed = start.elapsed();
    let k: Vec<f64> = first.kappas.iter().map(|k| k.unwrap_or(f64::NAN)).collect();
    let fused = k[4];
    let ablation = (|| {
        ensure(first.kappas.iter().all(Option::is_some), || "a kappa is undefined".into())?;
        for (i, name) in ["cfp", "oct", "vessel"].iter().enumerate() {
            ensure(fused > k[i], || format!("fused kappa {fused:.4} does not exceed {name} {:.4}", k[i]))?;
        }
        ensure(fused >= k[3] - 0.02, || format!("fused kappa {fused:.4} below cfp+oct {:.4} − 0.02", k[3]))?;
        within_time(elapsed, Duration::from_secs(300))?;
        Ok(format!(
            "kappa cfp {:.4}, oct {:.4}, vessel {:.4}, cfp+oct {:.4}, all three {fused:.4}; {elapsed:.2?}",
            k[0], k[1], k[2], k[3]
        ))
    })();
    let uncertainty = match (first.u_clean, first.u_conflict) {
        (Some(clean), Some(conflict)) if conflict > clean => {
            Ok(format!("mean fused u: conflict {conflict:.4} > clean {clean:.4}"))
        }
        (clean, conflict) => Err(format!("mean fused u: conflict {conflict:?}, clean {clean:?}")),
    };
    let second = run_benchmark();
    let bits = |v: &BenchmarkNumbers| -> Vec<u64> {
        let mut out: Vec<u64> = v.kappas.iter().map(|k| k.map_or(u64::MAX, f64::to_bits)).collect();
        out.extend(v.accuracies.iter().map(|a| a.to_bits()));
        out.extend([v.u_clean, v.u_conflict].iter().map(|u| u.map_or(u64::MAX, f64::to_bits)));
        out.extend(v.encoder_losses.iter().flatten().map(|l| l.to_bits()));
        out.extend(v.classifier_totals.iter().map(|l| l.to_bits()));
        out
    };
    let determinism = if bits(&first) == bits(&second) && first.evaluation == second.evaluation {
        Ok(format!("{} reported numbers and {} per-sample outcomes identical", bits(&first).len(), first.evaluation.samples.len()))
    } else {
        Err("second run differs".into())
    };
    vec![("ablation analogue", ablation), ("uncertainty on conflicts", uncertainty), ("determinism", determinism)]
}

// ---------------------------------------------------------------------------
// Kappa oracle

/// Agreement form: κ = (p_o − p_e) / (1 − p_e) with weights 1 − (i−j)²/(K−1)².
fn kappa_direct(counts: &[Vec<u64>]) -> Option<f64> {
    let k = counts.len();
    let n: f64 = counts.iter().flatten().map(|c| *c as f64).sum();
    let rows: Vec<f64> = counts.iter().map(|r| r.iter().map(|c| *c as f64).sum::<f64>() / n).collect();
    let cols: Vec<f64> = (0..k).map(|j| counts.iter().map(|r| r[j] as f64).sum::<f64>() / n).collect();
    let agree = |i: usize, j: usize| 1.0 - ((i as f64 - j as f64) / (k as f64 - 1.0)).powi(2);
    let (mut po, mut pe) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            po += agree(i, j) * counts[i][j] as f64 / n;
            pe += agree(i, j) * rows[i] * cols[j];
        }
    }
    if (1.0 - pe).abs() < 1e-15 {
        None
    } else {
        Some((po - pe) / (1.0 - pe))
    }
}

fn kappa_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(2..=6);
        let counts: Vec<Vec<u64>> = (0..k).map(|_| (0..k).map(|_| rng.random_range(0..50)).collect()).collect();
        let cm = ConfusionMatrix::from_counts(k, counts.concat()).unwrap();
        match (quadratic_weighted_kappa(&cm).unwrap(), kappa_direct(&counts)) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (a, b) => ensure(a.is_none() && b.is_none(), || format!("undefined mismatch {a:?} vs {b:?}"))?,
        }
    }
    ensure(worst <= 1e-12, || format!("max disagreement {worst:e}"))?;
    let perfect = ConfusionMatrix::from_counts(3, vec![5, 0, 0, 0, 7, 0, 0, 0, 2]).unwrap();
    let kp = quadratic_weighted_kappa(&perfect).unwrap();
    ensure(kp == Some(1.0), || format!("perfect agreement gives {kp:?}"))?;
    let (r, c) = ([2u64, 3, 5], [1u64, 4, 2]);
    let product: Vec<u64> = r.iter().flat_map(|a| c.iter().map(move |b| a * b)).collect();
    let ki = quadratic_weighted_kappa(&ConfusionMatrix::from_counts(3, product).unwrap()).unwrap().unwrap();
    ensure(ki.abs() <= 1e-12, || format!("independence product gives {ki}"))?;
    Ok(format!("max disagreement {worst:.1e} over 100 matrices; perfect 1, independent {ki:.1e}"))
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let checks: [(&str, fn() -> Outcome); 7] = [
        ("evidence algebra", evidence_algebra),
        ("fusion hand example", fusion_hand_example),
        ("loss oracles", loss_oracles),
        ("gradient suite", gradient_suite),
        ("contrastive hand example", contrastive_hand_example),
        ("vesselness suite", vesselness_suite),
        ("kappa oracle", kappa_oracle),
    ];
    let guard = |f: &dyn Fn() -> Outcome| match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(e) => Err(e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    for (name, f) in checks.iter().take(6) {
        results.push((name, guard(f)));
    }
    match catch_unwind(benchmark_checks) {
        Ok(r) => results.extend(r),
        Err(_) => {
            for name in ["ablation analogue", "uncertainty on conflicts", "determinism"] {
                results.push((name, Err("benchmark run panicked".into())));
            }
        }
    }
    results.push((checks[6].0, guard(&checks[6].1)));

    let mut failed = 0;
    for (i, (name, r)) in results.iter().enumerate() {
        match r {
            Ok(detail) => println!("[{:>2}] PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[{:>2}] FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
