use std::path::{Path, PathBuf};

use anyhow::Context as _;
use clap::Args;
use lrexplain_core::bundle::ModelBundle;
use lrexplain_core::json;
use lrexplain_core::lr::{score_manifest, serialize_scores, UnscoredRecord};
use serde::Serialize;

use super::{read_manifest, write_text};
use crate::embedders;
use crate::error::provider;
use crate::Context;

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Model bundle written by `train`.
    #[arg(long)]
    bundle: PathBuf,
    /// Test manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Score file to write (JSON lines).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct UnscoredLine<'a> {
    pair_id: &'a str,
    status: &'static str,
    reason: &'a str,
}

/// Sidecar listing records that produced no score: `<out>.unscored.jsonl`.
pub fn unscored_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".unscored.jsonl");
    out.with_file_name(name)
}

pub fn run(ctx: &Context, a: ScoreArgs) -> anyhow::Result<()> {
    let bundle = ModelBundle::read(&a.bundle)
        .with_context(|| format!("reading bundle {}", a.bundle.display()))?;
    let manifest = read_manifest(&a.manifest)?;
    let needs_embedder = manifest.records().iter().any(|r| r.embedding.is_none());
    let embedder = if needs_embedder {
        embedders::for_tag(&bundle.provider_tag, &ctx.file.embedding, &a.manifest, ctx.parallelism)?
    } else {
        None
    };
    let report = score_manifest(&bundle, &manifest, embedder.as_deref())?;

    write_text(&a.out, &serialize_scores(&report.scored)?)?;
    let mut sidecar = String::new();
    let listed = |status: &'static str, items: &[UnscoredRecord], out: &mut String| -> anyhow::Result<()> {
        for u in items {
            out.push_str(&json::to_line(&UnscoredLine {
                pair_id: &u.pair_id,
                status,
                reason: &u.reason,
            })?);
            out.push('\n');
        }
        Ok(())
    };
    listed("skipped", &report.skipped, &mut sidecar)?;
    listed("failed", &report.failed, &mut sidecar)?;
    write_text(&unscored_path(&a.out), &sidecar)?;

    println!(
        "scored {} of {} records ({} skipped, {} failed, {} embedded) -> {}",
        report.scored.len(),
        manifest.len(),
        report.skipped.len(),
        report.failed.len(),
        report.embedded,
        a.out.display()
    );
    if !report.failed.is_empty() {
        return Err(provider(format!(
            "{} records could not be embedded; see {}",
            report.failed.len(),
            unscored_path(&a.out).display()
        )));
    }
    Ok(())
}
