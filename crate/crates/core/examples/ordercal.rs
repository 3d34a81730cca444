// Scratch probe for the dictionary-ordering protocol. Not shipped.
//
// Usage: ordercal <spread> <atoms> <iters> <seeds> [base_seed] [lambda] [subclasses_per_label]

use stein_sparse::coding::batch_code_lenient;
use stein_sparse::dictionary::{init_dictionary, learn, InitMethod, LearnOptions, StableDictionary};
use stein_sparse::kernel::KernelParams;
use stein_sparse::set::LabeledSpdSet;
use stein_sparse::spd::SpdMatrix;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stein_sparse::synth::{gen_classification, gen_mixture_classes, SynthClassificationConfig, SynthMixtureClassConfig};

// Disjoint-subset mixtures: 8 classes, class c mixes sources {3c, 3c+1, 3c+2}
// from a pool of 24 with |N(0,1)| weights scaled by `wscale` variability.
fn gen_pairs(seed: u64, wpow: f64, per_source: usize, per_class: usize, point_k: usize) -> (LabeledSpdSet, LabeledSpdSet) {
    let d = 5usize;
    let pool = 8 * per_source;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sources = Vec::new();
    for _ in 0..pool {
        let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..=2.0)).collect();
        let scale: Vec<f64> = (0..d).map(|_| rng.random_range(0.25..=0.5)).collect();
        let draws: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..d).map(|i| mean[i] + scale[i] * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let n = draws.len() as f64;
        let mut mu = vec![0.0; d];
        for row in &draws {
            for i in 0..d { mu[i] += row[i] / n; }
        }
        let mut cov = DMatrix::zeros(d, d);
        for row in &draws {
            for a in 0..d {
                for b in 0..d {
                    cov[(a, b)] += (row[a] - mu[a]) * (row[b] - mu[b]) / (n - 1.0);
                }
            }
        }
        sources.push(SpdMatrix::new(cov).unwrap());
    }
    let mut train_points = Vec::new();
    let mut train_labels = Vec::new();
    let mut test_points = Vec::new();
    let mut test_labels = Vec::new();
    for c in 0..8usize {
        for k in 0..per_class {
            let mut idx: Vec<usize> = (0..per_source).collect();
            for i in 0..point_k {
                let j = rng.random_range(i..per_source);
                idx.swap(i, j);
            }
            let mut sum = DMatrix::zeros(d, d);
            for &j in idx.iter().take(point_k) {
                let w: f64 = rng.sample::<f64, _>(StandardNormal);
                let w = w.abs().powf(wpow);
                sum += sources[per_source * c + j].matrix() * w;
            }
            let point = SpdMatrix::new(sum).unwrap();
            if k < per_class / 2 {
                train_points.push(point);
                train_labels.push(c);
            } else {
                test_points.push(point);
                test_labels.push(c);
            }
        }
    }
    (
        LabeledSpdSet::new(train_points, Some(train_labels)).unwrap(),
        LabeledSpdSet::new(test_points, Some(test_labels)).unwrap(),
    )
}

fn gen_disjoint_k(seed: u64, wpow: f64, per_source: usize, per_class: usize, cfrac: f64, eta: f64) -> (LabeledSpdSet, LabeledSpdSet) {
    let d = 5usize;
    let pool = 8 * per_source;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sources = Vec::new();
    for _ in 0..pool {
        let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..=2.0)).collect();
        let scale: Vec<f64> = (0..d).map(|_| rng.random_range(0.25..=0.5)).collect();
        let draws: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..d).map(|i| mean[i] + scale[i] * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let n = draws.len() as f64;
        let mut mu = vec![0.0; d];
        for row in &draws {
            for i in 0..d { mu[i] += row[i] / n; }
        }
        let mut cov = DMatrix::zeros(d, d);
        for row in &draws {
            for a in 0..d {
                for b in 0..d {
                    cov[(a, b)] += (row[a] - mu[a]) * (row[b] - mu[b]) / (n - 1.0);
                }
            }
        }
        sources.push(SpdMatrix::new(cov).unwrap());
    }
    let mut train_points = Vec::new();
    let mut train_labels = Vec::new();
    let mut test_points = Vec::new();
    let mut test_labels = Vec::new();
    for c in 0..8usize {
        for k in 0..per_class {
            let corrupt = k < per_class / 2 && rng.random_range(0.0..1.0) < cfrac;
            let mut sum = DMatrix::zeros(d, d);
            if corrupt {
                for src in sources.iter() {
                    let w: f64 = rng.sample::<f64, _>(StandardNormal);
                    let w = w.abs().powf(wpow);
                    sum += src.matrix() * w;
                }
            } else {
                for j in 0..per_source {
                    let w: f64 = rng.sample::<f64, _>(StandardNormal);
                    let w = w.abs().powf(wpow);
                    sum += sources[per_source * c + j].matrix() * w;
                }
            }
            let point = SpdMatrix::new(sum).unwrap();
            if k < per_class / 2 {
                train_points.push(point);
                train_labels.push(c);
            } else {
                test_points.push(point);
                test_labels.push(c);
            }
        }
    }
    (
        LabeledSpdSet::new(train_points, Some(train_labels)).unwrap(),
        LabeledSpdSet::new(test_points, Some(test_labels)).unwrap(),
    )
}

// Dominant-source mixtures: samples combine 3 of `pool` sources with
// |N(0,1)| weights; the label is the heaviest source's index.
fn gen_dominant(seed: u64, pool: usize, total: usize) -> (LabeledSpdSet, LabeledSpdSet) {
    let d = 5usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sources = Vec::new();
    for _ in 0..pool {
        let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..=2.0)).collect();
        let scale: Vec<f64> = (0..d).map(|_| rng.random_range(0.25..=0.5)).collect();
        let draws: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..d).map(|i| mean[i] + scale[i] * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let n = draws.len() as f64;
        let mut mu = vec![0.0; d];
        for row in &draws {
            for i in 0..d { mu[i] += row[i] / n; }
        }
        let mut cov = DMatrix::zeros(d, d);
        for row in &draws {
            for a in 0..d {
                for b in 0..d {
                    cov[(a, b)] += (row[a] - mu[a]) * (row[b] - mu[b]) / (n - 1.0);
                }
            }
        }
        sources.push(SpdMatrix::new(cov).unwrap());
    }
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..total {
        let picks = rand::seq::index::sample(&mut rng, pool, 3);
        let mut sum = DMatrix::zeros(d, d);
        let mut best = f64::NEG_INFINITY;
        let mut label = 0usize;
        for i in picks.iter() {
            let w: f64 = rng.sample::<f64, _>(StandardNormal);
            let w = w.abs();
            sum += sources[i].matrix() * w;
            if w > best { best = w; label = i; }
        }
        points.push(SpdMatrix::new(sum).unwrap());
        labels.push(label);
    }
    let half = total / 2;
    let train = LabeledSpdSet::new(points[..half].to_vec(), Some(labels[..half].to_vec())).unwrap();
    let test = LabeledSpdSet::new(points[half..].to_vec(), Some(labels[half..].to_vec())).unwrap();
    (train, test)
}

fn unit(points: &LabeledSpdSet) -> LabeledSpdSet {
    let scaled: Vec<SpdMatrix> = points
        .points()
        .iter()
        .map(|a| a.scale(1.0 / a.frobenius_norm()).unwrap())
        .collect();
    LabeledSpdSet::unlabeled(scaled).unwrap()
}

fn code_frac(set: &LabeledSpdSet, dict: &StableDictionary, frac: f64) -> Vec<stein_sparse::coding::SparseCode> {
    use stein_sparse::coding::{solve_lenient, CodingProblem};
    set.points()
        .iter()
        .map(|q| {
            let kv = dict.kernel_responses(q).unwrap();
            let peak = kv.iter().cloned().fold(0.0f64, f64::max);
            let problem = CodingProblem::new(kv, dict.gram().entries(), 1.0, frac * peak).unwrap();
            solve_lenient(&problem, 1e-8, 10000).unwrap()
        })
        .collect()
}

fn nn_accuracy(
    dict: &StableDictionary,
    train: &LabeledSpdSet,
    test: &LabeledSpdSet,
    lam: Option<f64>,
    cosine: bool,
) -> (f64, f64) {
    let (ctr, cte) = match lam {
        Some(l) if l < 0.0 => (code_frac(train, dict, -l), code_frac(test, dict, -l)),
        _ => (
            batch_code_lenient(train, dict, lam).unwrap(),
            batch_code_lenient(test, dict, lam).unwrap(),
        ),
    };
    let nnz: usize = ctr.iter().chain(cte.iter()).map(|c| c.coefficients.iter().filter(|v| **v != 0.0).count()).sum();
    let mean_nnz = nnz as f64 / (ctr.len() + cte.len()) as f64;
    let trl = train.labels().unwrap();
    let tel = test.labels().unwrap();
    let mut hits = 0usize;
    for (q, code_q) in cte.iter().enumerate() {
        let mut best = f64::INFINITY;
        let mut best_label = usize::MAX;
        for (t, code_t) in ctr.iter().enumerate() {
            let dist: f64 = if cosine {
                let dot: f64 = code_q.coefficients.iter().zip(&code_t.coefficients).map(|(a, b)| a * b).sum();
                let na: f64 = code_q.coefficients.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nb: f64 = code_t.coefficients.iter().map(|b| b * b).sum::<f64>().sqrt();
                1.0 - dot / (na * nb).max(1e-300)
            } else {
                code_q.coefficients.iter().zip(&code_t.coefficients).map(|(a, b)| (a - b) * (a - b)).sum()
            };
            if dist < best {
                best = dist;
                best_label = trl[t];
            }
        }
        if best_label == tel[q] {
            hits += 1;
        }
    }
    (hits as f64 / test.len() as f64, mean_nnz)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let spread: f64 = args[1].parse().unwrap();
    let n_atoms: usize = args[2].parse().unwrap();
    let iters: usize = args[3].parse().unwrap();
    let seeds: u64 = args[4].parse().unwrap();
    let base: u64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0);
    let lam: Option<f64> = args.get(6).and_then(|s| s.parse().ok()).filter(|l: &f64| *l != 0.0);
    let sub: usize = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(1);
    let cosine: bool = args.get(8).map(|s| s == "cos").unwrap_or(false);
    let per_class: usize = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(32);
    let cfrac: f64 = args.get(10).map(|s| s.parse().unwrap()).unwrap_or(0.0);
    let eta: f64 = args.get(11).map(|s| s.parse().unwrap()).unwrap_or(0.0);

    let mut sums = [0.0f64; 3];
    for s in 0..seeds {
        let (train, test) = if sub == 9 {
            gen_dominant(base + s, 8, 256)
        } else if sub == 7 {
            gen_disjoint_k(base + s, spread, 3, per_class, cfrac, eta)
        } else if sub == 8 {
            gen_pairs(base + s, spread, 6, per_class, 2)
        } else if sub == 4 {
            gen_pairs(base + s, spread, 4, per_class, 2)
        } else if sub == 6 {
            gen_disjoint_k(base + s, spread, 2, per_class, cfrac, eta)
        } else if sub == 0 {
            gen_mixture_classes(&SynthMixtureClassConfig::standard(base + s)).unwrap()
        } else {
            let cfg = SynthClassificationConfig {
                classes: 8 * sub,
                total: 256,
                dim: 5,
                spread,
                ..SynthClassificationConfig::easy(base + s)
            };
            let (train0, test0) = gen_classification(&cfg).unwrap();
            let relabel = |set: &LabeledSpdSet| {
                let labels: Vec<usize> = set.labels().unwrap().iter().map(|l| l / sub).collect();
                LabeledSpdSet::new(set.points().to_vec(), Some(labels)).unwrap()
            };
            (relabel(&train0), relabel(&test0))
        };
        let params = KernelParams::default_for_dim(5).unwrap();

        let rand_atoms = unit(init_dictionary(&train, n_atoms, InitMethod::Random, base + s)
            .unwrap()
            .atoms());
        let km_atoms = unit(init_dictionary(&train, n_atoms, InitMethod::KMeans, base + s)
            .unwrap()
            .atoms());
        let d_rand = StableDictionary::new(rand_atoms, params.clone()).unwrap();
        let d_km = StableDictionary::new(km_atoms, params.clone()).unwrap();
        let mut opts = LearnOptions::new(n_atoms);
        opts.iterations = iters;
        opts.seed = base + s;
        opts.init = InitMethod::KMeans;
        opts.lambda = lam.filter(|l| *l > 0.0);
        let (d_learn, _) = learn(&train, &opts).unwrap();

        let (a_rand, z_rand) = nn_accuracy(&d_rand, &train, &test, lam, cosine);
        let (a_km, z_km) = nn_accuracy(&d_km, &train, &test, lam, cosine);
        let (a_learn, z_learn) = nn_accuracy(&d_learn, &train, &test, lam, cosine);
        sums[0] += a_rand;
        sums[1] += a_km;
        sums[2] += a_learn;
        println!("seed {s}: random {a_rand:.4} (nnz {z_rand:.1}) kmeans {a_km:.4} (nnz {z_km:.1}) learned {a_learn:.4} (nnz {z_learn:.1})");
    }
    let n = seeds as f64;
    println!(
        "means: random {:.4} kmeans {:.4} learned {:.4} | learned-random {:.2} pts",
        sums[0] / n,
        sums[1] / n,
        sums[2] / n,
        (sums[2] - sums[0]) / n * 100.0
    );
}
