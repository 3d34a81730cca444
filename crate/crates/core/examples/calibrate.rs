//! Scratch calibration harness for the synthetic classification task.
use rayon::prelude::*;
use stein_sparse::baseline::{classify_euclidean, EuclideanDictionary};
use stein_sparse::coding::classify_residual;
use stein_sparse::dictionary::StableDictionary;
use stein_sparse::geometry::karcher_mean;
use stein_sparse::geometry::stein_divergence;
use stein_sparse::kernel::KernelParams;
use stein_sparse::synth::{gen_classification, SynthClassificationConfig};

fn accuracy_rsr(train: &stein_sparse::LabeledSpdSet, test: &stein_sparse::LabeledSpdSet, lam: Option<f64>, sigma: Option<f64>) -> f64 {
    let d = train.dim().unwrap();
    let params = match sigma {
        Some(s) => KernelParams::new(s, d).unwrap(),
        None => KernelParams::default_for_dim(d).unwrap(),
    };
    let dict = StableDictionary::new(train.clone(), params).unwrap();
    let hits: usize = test
        .points()
        .par_iter()
        .zip(test.labels().unwrap().par_iter())
        .map(|(q, &l)| (classify_residual(q, &dict, lam.map(|l| l)).unwrap() == l) as usize)
        .sum();
    hits as f64 / test.len() as f64
}

fn accuracy_loge(train: &stein_sparse::LabeledSpdSet, test: &stein_sparse::LabeledSpdSet, lam: Option<f64>) -> f64 {
    let dict = EuclideanDictionary::from_spd_set(train).unwrap();
    let hits: usize = test
        .points()
        .par_iter()
        .zip(test.labels().unwrap().par_iter())
        .map(|(q, &l)| (classify_euclidean(q, &dict, lam).unwrap() == l) as usize)
        .sum();
    hits as f64 / test.len() as f64
}

fn accuracy_nearest_mean(train: &stein_sparse::LabeledSpdSet, test: &stein_sparse::LabeledSpdSet) -> f64 {
    let labels = train.labels().unwrap();
    let classes = train.distinct_labels();
    let means: Vec<_> = classes
        .iter()
        .map(|&c| {
            let members: Vec<_> = train
                .points()
                .iter()
                .zip(labels)
                .filter(|&(_, &l)| l == c)
                .map(|(p, _)| p.clone())
                .collect();
            karcher_mean(&members, 1e-6, 50).unwrap_or_else(|e| match e {
                stein_sparse::Error::MeanDidNotConverge { last, .. } => *last,
                other => panic!("{other:?}"),
            })
        })
        .collect();
    let hits: usize = test
        .points()
        .par_iter()
        .zip(test.labels().unwrap().par_iter())
        .map(|(q, &l)| {
            let mut best = (0usize, f64::INFINITY);
            for (ci, m) in means.iter().enumerate() {
                let s = stein_divergence(q, m).unwrap();
                if s < best.1 {
                    best = (classes[ci], s);
                }
            }
            (best.0 == l) as usize
        })
        .sum();
    hits as f64 / test.len() as f64
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mean_scale: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let trials: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(5);
    let lambda: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(-1.0);
    let sigma: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(-1.0);
    let sig = if sigma < 0.0 { None } else { Some(sigma) };
    println!("mean_scale={mean_scale} trials={trials} lambda={lambda} sigma={sigma} (neg => default)");
    let mut stats = vec![vec![]; 6];
    for t in 0..trials {
        let mut easy_cfg = SynthClassificationConfig::easy(1000 + t);
        easy_cfg.mean_scale = mean_scale;
        let mut hard_cfg = SynthClassificationConfig::hard(1000 + t);
        hard_cfg.mean_scale = mean_scale;
        let (etr, ete) = gen_classification(&easy_cfg).unwrap();
        let (htr, hte) = gen_classification(&hard_cfg).unwrap();
        let lam = if lambda < 0.0 { None } else { Some(lambda) };
        let vals = [
            accuracy_rsr(&etr, &ete, lam, sig),
            accuracy_rsr(&htr, &hte, lam, sig),
            accuracy_loge(&etr, &ete, lam),
            accuracy_loge(&htr, &hte, lam),
            accuracy_nearest_mean(&etr, &ete),
            accuracy_nearest_mean(&htr, &hte),
        ];
        println!("trial {t}: rsr {:.3}/{:.3}  loge {:.3}/{:.3}  nmean {:.3}/{:.3}",
            vals[0], vals[1], vals[2], vals[3], vals[4], vals[5]);
        for (s, v) in stats.iter_mut().zip(vals) { s.push(v); }
    }
    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    println!("MEANS: rsr easy {:.3} hard {:.3} | loge easy {:.3} hard {:.3} | nmean easy {:.3} hard {:.3}",
        mean(&stats[0]), mean(&stats[1]), mean(&stats[2]), mean(&stats[3]), mean(&stats[4]), mean(&stats[5]));
    println!("hard gap rsr-loge: {:.1} pts", (mean(&stats[1]) - mean(&stats[3])) * 100.0);
}
