use std::path::PathBuf;

use anyhow::Context as _;
use clap::Args;
use lrexplain_core::data::{serialize_manifest, PromptRegime};
use lrexplain_core::json;
use lrexplain_core::synth::{bayes_auc, generate, to_manifest, ManifestOptions, SynthSpec};
use serde_json::json;

use super::write_text;
use crate::error::usage;
use crate::Context;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for train.jsonl, test.jsonl and truth.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Embedding dimension.
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// Training vectors per class.
    #[arg(long, default_value_t = 5000)]
    n_per_class: usize,
    /// Test vectors per class (defaults to the training count).
    #[arg(long)]
    test_n_per_class: Option<usize>,
    /// Distance between class centres along the first axis.
    #[arg(long, default_value_t = 2.0)]
    delta: f64,
    /// Per-axis standard deviation of each component.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Mixture components per class.
    #[arg(long, default_value_t = 1)]
    components_per_class: usize,
    /// Regime recorded on test records.
    #[arg(long, default_value = "no-score")]
    test_regime: PromptRegime,
}

pub fn run(ctx: &Context, a: SynthArgs) -> anyhow::Result<()> {
    if a.test_regime == PromptRegime::Grounded {
        return Err(usage("test records cannot use the grounded regime"));
    }
    let train_spec = SynthSpec {
        k: a.k,
        n_per_class: a.n_per_class,
        mean_separation: a.delta,
        covariance_scale: a.sigma,
        mixture_components_per_class: a.components_per_class,
        seed: ctx.seed,
    };
    let test_spec = SynthSpec {
        n_per_class: a.test_n_per_class.unwrap_or(a.n_per_class),
        seed: ctx.seed.wrapping_add(1),
        ..train_spec.clone()
    };
    let train = generate(&train_spec).map_err(|e| usage(e.to_string()))?;
    let test = generate(&test_spec).map_err(|e| usage(e.to_string()))?;

    let train_manifest = to_manifest(
        &train,
        &train_spec,
        &ManifestOptions {
            regime: PromptRegime::Grounded,
            id_prefix: "train".into(),
            ..Default::default()
        },
    )?;
    let test_manifest = to_manifest(
        &test,
        &test_spec,
        &ManifestOptions {
            regime: a.test_regime,
            id_prefix: "test".into(),
            ..Default::default()
        },
    )?;

    write_text(&a.out_dir.join("train.jsonl"), &serialize_manifest(&train_manifest)?)?;
    write_text(&a.out_dir.join("test.jsonl"), &serialize_manifest(&test_manifest)?)?;
    let truth = json!({
        "train_spec": train_spec,
        "test_spec": test_spec,
        "params": train.params,
        "bayes_auc": bayes_auc(&train_spec),
    });
    write_text(
        &a.out_dir.join("truth.json"),
        &(json::to_pretty(&truth).context("encoding truth.json")? + "\n"),
    )?;
    println!(
        "wrote {} training and {} test records to {}",
        train_manifest.len(),
        test_manifest.len(),
        a.out_dir.display()
    );
    if let Some(auc) = bayes_auc(&train_spec) {
        println!("analytic Bayes AUC: {auc:.6}");
    }
    Ok(())
}
