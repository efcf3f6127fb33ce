use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context as _};
use clap::Args;
use lrexplain_core::bundle::ModelBundle;
use lrexplain_core::data::{filter_training, PairLabel, PromptRegime};
use lrexplain_core::embedding::EmbeddingVector;
use lrexplain_core::gmm::{fit_gmm, CovarianceKind, EmFitReport, GmmOptions, Hypothesis};
use lrexplain_core::pca::fit_pca;
use nalgebra::DMatrix;
use serde_json::{json, Value};

use super::{read_manifest, unix_time};
use crate::embedders;
use crate::error::{provider, usage};
use crate::Context;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training manifest (grounded regime, labelled).
    #[arg(long)]
    manifest: PathBuf,
    /// Where to write the model bundle.
    #[arg(long)]
    out: PathBuf,
    /// Mixture components per class.
    #[arg(long)]
    components: Option<usize>,
    /// Fraction of variance the PCA transform keeps.
    #[arg(long)]
    variance_target: Option<f64>,
    /// `full` or `diagonal`.
    #[arg(long)]
    covariance: Option<String>,
    /// Embedder for records without a stored embedding: `offline` or `remote`.
    #[arg(long, env = "LREXPLAIN_EMBEDDER")]
    embedder: Option<String>,
}

fn report_json(r: &EmFitReport) -> Value {
    json!({
        "iterations": r.iterations,
        "converged": r.converged,
        "final_log_likelihood": r.final_log_likelihood,
        "seed": r.seed,
    })
}

pub fn run(ctx: &Context, a: TrainArgs) -> anyhow::Result<()> {
    let t = &ctx.file.train;
    let components = a.components.unwrap_or(t.components);
    let variance_target = a.variance_target.unwrap_or(t.variance_target);
    let covariance: CovarianceKind = a
        .covariance
        .as_deref()
        .unwrap_or(&t.covariance)
        .parse()
        .map_err(|e: String| usage(e))?;
    if components == 0 {
        return Err(usage("--components must be at least 1"));
    }
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(usage(format!("--variance-target {variance_target} must lie in (0, 1]")));
    }

    let manifest = read_manifest(&a.manifest)?;
    if let Some(r) = manifest.records().iter().find(|r| r.regime != PromptRegime::Grounded) {
        bail!(
            "training records must use the grounded regime; {:?} is {}",
            r.pair_id,
            r.regime
        );
    }
    let dataset = manifest
        .metadata
        .get("dataset")
        .cloned()
        .unwrap_or_else(|| json!(a.manifest.file_name().map(|n| n.to_string_lossy().into_owned())));
    let unlabeled = manifest.records().iter().filter(|r| !r.label.is_known()).count();
    let filtered = filter_training(manifest);
    let removed_uncertain = filtered.removed - unlabeled;
    let kept = filtered.manifest;
    println!(
        "{} training records kept; removed {removed_uncertain} uncertain and {unlabeled} unlabeled",
        kept.len()
    );

    // Stored embeddings first, then the embedder for the rest.
    let missing: Vec<usize> = kept
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.embedding.is_none())
        .map(|(i, _)| i)
        .collect();
    let mut vectors: Vec<Option<EmbeddingVector>> =
        kept.records().iter().map(|r| r.embedding.clone()).collect();
    if !missing.is_empty() {
        let kind = a
            .embedder
            .clone()
            .or_else(|| ctx.file.embedder.clone())
            .unwrap_or_else(|| "offline".into());
        let embedder = embedders::by_kind(&kind, &ctx.file.embedding, &a.manifest, ctx.parallelism)?;
        let mut texts = Vec::with_capacity(missing.len());
        for &i in &missing {
            let r = &kept.records()[i];
            match r.explanation.as_deref().filter(|t| !t.trim().is_empty()) {
                Some(t) => texts.push(t),
                None => bail!("record {:?} has neither an explanation nor an embedding", r.pair_id),
            }
        }
        let outcomes = embedder.embed_many(&texts);
        let mut failures = Vec::new();
        for (&i, o) in missing.iter().zip(outcomes) {
            match o {
                Ok(v) => vectors[i] = Some(v),
                Err(e) => failures.push(format!("{}: {e}", kept.records()[i].pair_id)),
            }
        }
        if !failures.is_empty() {
            return Err(provider(format!(
                "{} of {} embeddings failed; first: {}",
                failures.len(),
                missing.len(),
                failures[0]
            )));
        }
    }
    let vectors: Vec<EmbeddingVector> = vectors.into_iter().map(|v| v.expect("filled")).collect();
    let Some(first) = vectors.first() else {
        bail!("no training records left after filtering");
    };
    let tag = first.provider_tag().to_string();
    if let Some(v) = vectors.iter().find(|v| v.provider_tag() != tag) {
        bail!(
            "training embeddings come from different spaces: {tag:?} and {:?}",
            v.provider_tag()
        );
    }

    let rows: Vec<&[f64]> = vectors.iter().map(EmbeddingVector::values).collect();
    let pca = fit_pca(&rows, variance_target).context("fitting PCA")?;
    let reduced = pca.transform_rows(&rows)?;
    println!(
        "PCA: {} -> {} dimensions, retained variance {:.4}",
        pca.d(),
        pca.k(),
        pca.retained_variance()
    );

    let class_rows = |label: PairLabel| -> DMatrix<f64> {
        let idx: Vec<usize> = kept
            .records()
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == label)
            .map(|(i, _)| i)
            .collect();
        DMatrix::from_fn(idx.len(), reduced.ncols(), |i, j| reduced[(idx[i], j)])
    };
    let fit = |label: PairLabel, hypothesis: Hypothesis, seed: u64| {
        let opts = GmmOptions {
            components,
            covariance_kind: covariance,
            seed,
            tol: t.tol,
            max_iter: t.max_iter,
            reg: t.reg,
        };
        let points = class_rows(label);
        fit_gmm(&points, hypothesis, &opts).map_err(|e| {
            anyhow!(e).context(format!(
                "fitting the {} mixture on {} records (insufficient or degenerate class data?)",
                label.as_str(),
                points.nrows()
            ))
        })
    };
    let seed_h0 = ctx.seed;
    let seed_h1 = ctx.seed.wrapping_add(1);
    let (h0, r0) = fit(PairLabel::Genuine, Hypothesis::H0, seed_h0)?;
    let (h1, r1) = fit(PairLabel::Impostor, Hypothesis::H1, seed_h1)?;
    for (name, r) in [("genuine (H0)", &r0), ("impostor (H1)", &r1)] {
        println!(
            "EM {name}: {} iterations, converged {}, log-likelihood {:.6}, monotone {}",
            r.iterations,
            r.converged,
            r.final_log_likelihood,
            r.is_monotone(1e-8)
        );
    }

    let n_genuine = kept.records().iter().filter(|r| r.label == PairLabel::Genuine).count();
    let mut meta = BTreeMap::new();
    meta.insert("dataset".into(), dataset);
    meta.insert("regime".into(), json!(PromptRegime::Grounded.as_str()));
    meta.insert("removed_uncertain_count".into(), json!(removed_uncertain));
    meta.insert("removed_unlabeled_count".into(), json!(unlabeled));
    meta.insert("n_genuine".into(), json!(n_genuine));
    meta.insert("n_impostor".into(), json!(kept.len() - n_genuine));
    meta.insert("components".into(), json!(components));
    meta.insert("covariance".into(), json!(covariance.as_str()));
    meta.insert("variance_target".into(), json!(variance_target));
    meta.insert("retained_variance".into(), json!(pca.retained_variance()));
    meta.insert("seeds".into(), json!({"h0": seed_h0, "h1": seed_h1}));
    meta.insert("em".into(), json!({"h0": report_json(&r0), "h1": report_json(&r1)}));
    meta.insert("trained_at_unix".into(), json!(unix_time()));

    let bundle = ModelBundle::new(tag, pca, h0, h1, meta)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    bundle.write(&a.out)?;
    println!("wrote bundle {}", a.out.display());
    Ok(())
}
