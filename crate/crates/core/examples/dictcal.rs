//! Scratch probe for the dictionary-recovery task scale. Not shipped.
//!
//! Usage: dictcal <std_lo> <std_hi> <lambda (neg = auto)> <iters> <seeds> <replace 0/1>

use stein_sparse::coding::batch_code_lenient;
use stein_sparse::dictionary::{
    energy, init_dictionary, learn, InitMethod, LearnOptions, StableDictionary,
};
use stein_sparse::kernel::KernelParams;
use stein_sparse::synth::{gen_dictionary_task, SynthDictionaryConfig};
use stein_sparse::LabeledSpdSet;

fn fresh_j(
    samples: &LabeledSpdSet,
    atoms: &LabeledSpdSet,
    lambda: Option<f64>,
) -> f64 {
    let params = KernelParams::default_for_dim(atoms.dim().unwrap()).unwrap();
    let dict = StableDictionary::new(atoms.clone(), params).unwrap();
    let codes = batch_code_lenient(samples, &dict, lambda).unwrap();
    energy(samples, &dict, &codes).unwrap()
}

fn normalized_set(set: &LabeledSpdSet) -> LabeledSpdSet {
    let pts = set
        .points()
        .iter()
        .map(|p| p.scale(1.0 / p.frobenius_norm()).unwrap())
        .collect();
    LabeledSpdSet::unlabeled(pts).unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lo: f64 = args[1].parse().unwrap();
    let hi: f64 = args[2].parse().unwrap();
    let lam_raw: f64 = args[3].parse().unwrap();
    let iters: usize = args[4].parse().unwrap();
    let seeds: usize = args[5].parse().unwrap();
    let replace: bool = args.get(6).map(|a| a == "1").unwrap_or(true);
    let lambda = if lam_raw < 0.0 { None } else { Some(lam_raw) };

    println!("std_range=({lo},{hi}) lambda={lambda:?} iters={iters}");
    for seed in 0..seeds as u64 {
        let mut cfg = SynthDictionaryConfig::standard(seed);
        cfg.std_range = (lo, hi);
        let (samples, _) = gen_dictionary_task(&cfg).unwrap();
        let norms: Vec<f64> = samples.points().iter().map(|p| p.frobenius_norm()).collect();
        let mean_norm = norms.iter().sum::<f64>() / norms.len() as f64;
        let min_norm = norms.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_norm = norms.iter().cloned().fold(0.0f64, f64::max);

        let kd = init_dictionary(&samples, 32, InitMethod::KMeans, seed).unwrap();
        let j_raw = fresh_j(&samples, kd.atoms(), lambda);
        let j_norm = fresh_j(&samples, &normalized_set(kd.atoms()), lambda);

        let mut opts = LearnOptions::new(32);
        opts.iterations = iters;
        opts.seed = seed;
        opts.init = InitMethod::KMeans;
        opts.lambda = lambda;
        opts.replace_unused = replace;
        let (dict, trace) = learn(&samples, &opts).unwrap();
        let j_learned = fresh_j(&samples, dict.atoms(), lambda);
        let first = trace.energy.first().unwrap();
        let last = trace.energy.last().unwrap();
        let skipped: usize = trace.skipped.iter().sum();
        println!(
            "seed {seed}: norms {min_norm:.2}/{mean_norm:.2}/{max_norm:.2} | \
             j_kmeans raw {j_raw:.2} norm {j_norm:.2} | learned {j_learned:.2} | \
             trace {first:.2} -> {last:.2} ({} its, {skipped} skips)",
            trace.energy.len()
        );
        for i in 0..trace.energy.len() {
            println!(
                "    it {i}: J {:.3} nnz {:.2} skips {}",
                trace.energy[i], trace.mean_nonzeros[i], trace.skipped[i]
            );
        }
    }
}
