//! Runs source training, adaptation and (optionally) fine-tuning on a
//! synthetic domain pair and prints the target RMSE before and after.
//!
//! Usage: `cargo run --release --example synthetic_run -- [seed] [variant] [shared]`

use std::time::Instant;

use recsys_dan::data::{synthesize_domain_pair, PairOptions, Split, SynthConfig};
use recsys_dan::eval::{evaluate, source_only_eval, LabelBook};
use recsys_dan::models::{DanVariant, ModelConfig};
use recsys_dan::training::{adapt_target, finetune_shared, pretrain_source, DanModel, PhaseReport, TrainConfig};

fn env<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> recsys_dan::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(0);
    let variant: DanVariant = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(DanVariant::UiDan);
    let shared: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.0);

    let synth = SynthConfig {
        shared_user_fraction: shared,
        shared_item_fraction: shared,
        fillers_per_review: env("FILLERS", 8),
        filler_vocab: env("FILLER_VOCAB", 2),
        ..SynthConfig::default()
    };
    let pair = synthesize_domain_pair(&synth, seed)?;
    let ds = pair.assemble(PairOptions { min_count: 5, max_len: env("MAX_LEN", 16), seed })?;
    let labels = LabelBook::new(&pair.sealed_labels);

    let model_cfg = ModelConfig {
        embed_dim: env("EMBED", 8),
        hidden_dim: env("HIDDEN", 32),
        interaction_dim: env("INTERACTION", 64),
        discriminator_hidden: env("DHIDDEN", 64),
        dropout: env("DROPOUT", 0.0),
        ..ModelConfig::new(ds.vocab.len())
    };
    let cfg = TrainConfig {
        lr: env("LR", 1.0),
        adversarial_lr: Some(env("ADV_LR", 0.1)),
        finetune_multiplier: env("FT_MULT", 0.03),
        lambda: env("LAMBDA", 1e-4),
        batch_size: env("BATCH", 64),
        adversarial_batch_size: Some(env("ADV_BATCH", 512)),
        seed,
        variant,
        source_epochs: env("SRC_EPOCHS", 60),
        source_patience: env("PATIENCE", 10),
        adversarial_epochs: env("ADV_EPOCHS", 200),
        discriminator_warmup_epochs: env("WARMUP", 30),
        finetune_warmup_epochs: env("FT_WARMUP", 20),
        finetune_epochs: env("FT_EPOCHS", 10),
        non_saturating: env("NON_SAT", 0) == 1,
        ..TrainConfig::default()
    };
    let mut model = DanModel::new(model_cfg, variant, seed)?;
    let mut report = PhaseReport::default();

    let start = Instant::now();
    let src = pretrain_source(&mut model, &ds, &cfg, None, &mut report)?;
    println!("source: {src:?} ({:.1}s)", start.elapsed().as_secs_f64());
    let before = source_only_eval(&model.source, &model.head, &ds, Split::Test, Some(&labels), None, seed)?;
    let src_fit = evaluate(&model.source, &model.head, &ds, recsys_dan::models::Domain::Source, Split::Test, None, None, "source", seed)?;
    println!("source test rmse {:.4}, source-only target rmse {:.4}", src_fit.rmse, before.rmse);

    let adapt = adapt_target(&mut model, &ds, &cfg, None, &mut report)?;
    let fin = adapt.final_stats();
    println!("initial {:?}\nfinal {:?}", adapt.initial, fin);
    println!(
        "adapt: epochs {} converged {} acc {:.3} -> {:.3}, d_cross {:.4} -> {:.4} ({:.1}s)",
        adapt.epochs_run,
        adapt.converged,
        adapt.initial.d_acc,
        fin.d_acc,
        adapt.initial.d_cross,
        fin.d_cross,
        start.elapsed().as_secs_f64()
    );
    let after = evaluate(&model.target, &model.head, &ds, recsys_dan::models::Domain::Target, Split::Test, Some(&labels), None, variant.short(), seed)?;
    println!("adapted target rmse {:.4} ({:+.2}%)", after.rmse, 100.0 * (after.rmse / before.rmse - 1.0));

    if variant != DanVariant::UiDan {
        let ft = finetune_shared(&mut model, &ds, &cfg, None, &mut report)?;
        for l in &ft.levels {
            println!("finetune {:?}: acc {:.3} -> {:.3} {:?}", l.level, l.accuracy_before, l.accuracy_after, l.history);
        }
        let tuned = evaluate(&model.target, &model.head, &ds, recsys_dan::models::Domain::Target, Split::Test, Some(&labels), None, variant.short(), seed)?;
        println!("fine-tuned target rmse {:.4} ({:.1}s)", tuned.rmse, start.elapsed().as_secs_f64());
    }
    Ok(())
}
