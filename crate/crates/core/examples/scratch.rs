// Scratch experiment runner (deleted before release).
use phonevq::ctc::map_codebook;
use phonevq::data::{Codebook, PhonemeInventory, QuantScheme, TrainConfig};
use phonevq::eval::mean_se;
use phonevq::trainer::{
    adapt, corpus_per, generate_corpus, mean_quantization_gap, pretrain, initial_codebook,
    ModelParams, SyntheticCorpusSpec,
};

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "map".into());
    match which.as_str() {
        "map" => experiment_map(),
        "pretrain" => experiment_pretrain(),
        "adapt" => experiment_adapt(),
        _ => panic!("unknown experiment"),
    }
}

fn experiment_map() {
    // Identity-encode mapping: d == d_e, map raw features.
    let dim = 8;
    let mut spec = SyntheticCorpusSpec::source(dim, 2.0, 80, 31);
    spec.noise_scale = 0.1;
    let corpus = generate_corpus(&spec).unwrap();
    let total_frames: usize = corpus.iter().map(|(f, _)| f.num_frames()).sum();
    println!("corpus: {} utterances, {} frames", corpus.len(), total_frames);
    let init = Codebook::random(1, 40, dim, 0.5, 99);
    for (lr, steps) in [(0.005, 60), (0.01, 100), (0.02, 150), (0.02, 250)] {
        let t0 = std::time::Instant::now();
        match map_codebook(&corpus, &init, steps, lr) {
            Ok((mapped, trace)) => {
                let first = trace.first().unwrap();
                let last = trace.last().unwrap();
                // Nearest-anchor check.
                let mut hits = 0;
                for v in 0..40 {
                    let e = mapped.entry(0, v);
                    let mut best = 0;
                    let mut best_d = f64::INFINITY;
                    for (a, anchor) in spec.anchors.iter().enumerate() {
                        let d: f64 = e.iter().zip(anchor).map(|(x, y)| (x - y) * (x - y)).sum();
                        if d < best_d {
                            best_d = d;
                            best = a;
                        }
                    }
                    if best == v {
                        hits += 1;
                    }
                }
                println!(
                    "lr={lr} steps={steps}: ll {first:.1} -> {last:.1}, nearest-anchor {hits}/40, {:?}",
                    t0.elapsed()
                );
            }
            Err(e) => println!("lr={lr}: {e}"),
        }
    }
}

fn base_config(dim: usize, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.seed = seed;
    cfg.input_dim = dim;
    cfg.model_dim = dim;
    cfg.hidden_dim = 24;
    cfg.steps = 300;
    cfg.map_steps = 40;
    cfg.map_lr = 0.002;
    cfg.learning_rate = 0.05;
    cfg.win = 4;
    cfg.k_neighbors = 8;
    cfg.mask_prob = 0.12;
    cfg.mask_span = 3;
    cfg
}

fn experiment_pretrain() {
    let dim = 8;
    for seed in [1u64, 2, 3] {
        let mut spec = SyntheticCorpusSpec::source(dim, 2.0, 24, seed);
        spec.noise_scale = 0.1;
        let corpus = generate_corpus(&spec).unwrap();
        let cfg = base_config(dim, seed);
        let params = ModelParams::init(&cfg, 40);
        let codebook = initial_codebook(&cfg).unwrap();
        let t0 = std::time::Instant::now();
        match pretrain(&corpus, &params, &codebook, &cfg) {
            Ok(out) => {
                let k = out.trace.len() / 5;
                let head: Vec<f64> = out.trace[..k].iter().map(|r| r.contrastive).collect();
                let tail: Vec<f64> = out.trace[out.trace.len() - k..]
                    .iter()
                    .map(|r| r.contrastive)
                    .collect();
                let per = corpus_per(&out.params, &out.codebook, &cfg, &corpus).unwrap();
                println!(
                    "seed {seed}: contrastive {:.4} -> {:.4}, rm {:.4} -> {:.4}, source PER {per:.3}, {:?}",
                    mean_se(&head).0,
                    mean_se(&tail).0,
                    mean_se(&out.trace[..k].iter().map(|r| r.rm).collect::<Vec<_>>()).0,
                    mean_se(&out.trace[out.trace.len() - k..].iter().map(|r| r.rm).collect::<Vec<_>>()).0,
                    t0.elapsed()
                );
                // gamma ablation for quantization gap
                for gamma in [0.0, 0.5] {
                    let mut cfg2 = cfg.clone();
                    cfg2.gamma = gamma;
                    let out2 = pretrain(&corpus, &params, &codebook, &cfg2).unwrap();
                    let features: Vec<_> = corpus.iter().map(|(f, _)| f.clone()).collect();
                    let gap =
                        mean_quantization_gap(&out2.params, &out2.codebook, &cfg2, &features)
                            .unwrap();
                    println!("  gamma={gamma}: mean |z - zhat| = {gap:.4}");
                }
            }
            Err(e) => println!("seed {seed}: FAILED {e}"),
        }
    }
}

fn experiment_adapt() {
    let dim = 8;
    let inv = PhonemeInventory::cmu();
    let t_idx = inv.index_of("T").unwrap();
    for seed in [1u64, 2, 3, 4, 5] {
        let mut spec = SyntheticCorpusSpec::source(dim, 2.0, 24, seed);
        spec.noise_scale = 0.1;
        let source = generate_corpus(&spec).unwrap();
        let cfg = base_config(dim, seed);
        let params = ModelParams::init(&cfg, 40);
        let codebook = initial_codebook(&cfg).unwrap();
        let pre = pretrain(&source, &params, &codebook, &cfg).unwrap();

        //

        let shift = spec.shift_vector(t_idx, 2.0);
        let target_spec = spec.with_shift(t_idx, shift);
        let target = generate_corpus(&target_spec).unwrap();
        let target_features: Vec<_> = target.iter().map(|(f, _)| f.clone()).collect();

        let per_before = corpus_per(&pre.params, &pre.codebook, &cfg, &target).unwrap();
        let mut adapt_cfg = cfg.clone();
        adapt_cfg.steps = 200;
        let t0 = std::time::Instant::now();
        let out = adapt(&target_features, &pre.params, &pre.codebook, &adapt_cfg).unwrap();
        let per_after = corpus_per(&out.params, &out.codebook, &adapt_cfg, &target).unwrap();
        // Largest drift?
        let norms: Vec<f64> = out
            .drift
            .iter()
            .map(|d| d.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let max_idx = (0..40).max_by(|&a, &b| norms[a].partial_cmp(&norms[b]).unwrap()).unwrap();
        println!(
            "seed {seed}: PER {per_before:.3} -> {per_after:.3}; max-drift codeword {} ({}), T drift {:.3}, {:?}",
            max_idx,
            inv.symbol(max_idx),
            norms[t_idx],
            t0.elapsed()
        );
    }
}
