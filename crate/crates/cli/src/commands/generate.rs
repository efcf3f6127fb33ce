use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;
use lrexplain_core::data::{parse_verdict, write_manifest, Manifest, PairRecord, PromptRegime};
use lrexplain_core::prompts::{default_fr_model_names, PromptSet};
use lrexplain_providers::{ChatClient, GenerationConfig, ProviderError, RateLimiter};
use rayon::prelude::*;

use super::read_manifest;
use crate::error::{provider, usage};
use crate::Context;

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Manifest of face pairs.
    #[arg(long)]
    manifest: PathBuf,
    /// Output manifest (default: update the input in place). An existing
    /// output is resumed: records that already carry an explanation for the
    /// requested regime are not sent again.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Prompt regime.
    #[arg(long)]
    regime: PromptRegime,
    /// Required with the grounded regime, which reveals the true label and
    /// is only valid for building training data.
    #[arg(long)]
    training: bool,
    /// Comma-separated FR model names injected into score-bearing prompts.
    #[arg(long, value_delimiter = ',')]
    fr_models: Vec<String>,
    /// Prefix joined to image identifiers that are not already URLs.
    #[arg(long, default_value = "")]
    image_url_prefix: String,
    /// Directory of prompt templates replacing the built-in ones.
    #[arg(long)]
    prompts_dir: Option<PathBuf>,
    #[arg(long, env = "LREXPLAIN_BASE_URL")]
    base_url: Option<String>,
    #[arg(long, env = "LREXPLAIN_MODEL")]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_retries: Option<usize>,
    /// Request timeout in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    /// Request budget per minute.
    #[arg(long)]
    rpm: Option<usize>,
}

enum Failure {
    Prompt(String),
    Provider(ProviderError),
}

fn image_url(prefix: &str, id: &str) -> String {
    if id.contains("://") || id.starts_with("data:") {
        id.to_string()
    } else {
        format!("{prefix}{id}")
    }
}

fn generation_config(base: &GenerationConfig, a: &GenerateArgs) -> GenerationConfig {
    let mut cfg = base.clone();
    if let Some(v) = &a.base_url {
        cfg.base_url = v.clone();
    }
    if let Some(v) = &a.model {
        cfg.model_name = v.clone();
    }
    if let Some(v) = a.temperature {
        cfg.temperature = v;
    }
    if let Some(v) = a.max_retries {
        cfg.max_retries = v;
    }
    if let Some(v) = a.timeout {
        cfg.timeout_secs = v;
    }
    if let Some(v) = a.rpm {
        cfg.requests_per_minute = v;
    }
    cfg
}

/// Starting state: the existing output when resuming, else the input.
fn working_copy(a: &GenerateArgs, out: &PathBuf) -> anyhow::Result<Manifest> {
    let input = read_manifest(&a.manifest)?;
    if out == &a.manifest || !out.exists() {
        return Ok(input);
    }
    let previous = read_manifest(out)?;
    let ids = |m: &Manifest| -> HashSet<String> { m.records().iter().map(|r| r.pair_id.clone()).collect() };
    if ids(&previous) != ids(&input) {
        anyhow::bail!(
            "{} exists but holds different pairs than {}; remove it or choose another --out",
            out.display(),
            a.manifest.display()
        );
    }
    Ok(previous)
}

fn done(r: &PairRecord, regime: PromptRegime) -> bool {
    r.regime == regime && r.explanation.as_deref().is_some_and(|t| !t.trim().is_empty())
}

pub fn run(ctx: &Context, a: GenerateArgs) -> anyhow::Result<()> {
    if a.regime == PromptRegime::Grounded && !a.training {
        return Err(usage(
            "the grounded regime reveals the true label; pass --training to build training data with it",
        ));
    }
    if a.training && a.regime != PromptRegime::Grounded {
        return Err(usage("--training is only meaningful with --regime grounded"));
    }
    let prompts = match &a.prompts_dir {
        Some(d) => PromptSet::load_dir(d)?,
        None => PromptSet::builtin(),
    };
    let fr_models = if a.fr_models.is_empty() { default_fr_model_names() } else { a.fr_models.clone() };
    let out = a.out.clone().unwrap_or_else(|| a.manifest.clone());
    let manifest = working_copy(&a, &out)?;
    let (metadata, mut records) = (manifest.metadata.clone(), manifest.into_records());

    let pending: Vec<usize> = (0..records.len()).filter(|&i| !done(&records[i], a.regime)).collect();
    if pending.is_empty() {
        println!("all {} records already have {} explanations", records.len(), a.regime);
        if out != a.manifest && !out.exists() {
            write_manifest(&Manifest::new(records, metadata)?, &out)?;
        }
        return Ok(());
    }

    let cfg = generation_config(&ctx.file.generation, &a);
    let limiter = Arc::new(RateLimiter::per_minute(cfg.requests_per_minute.max(1)));
    let client = ChatClient::from_env(cfg, limiter)?;

    let mut prompt_failures = Vec::new();
    let mut provider_failures = Vec::new();
    let mut generated = 0usize;
    let chunk = (ctx.parallelism * 4).max(1);
    for ids in pending.chunks(chunk) {
        let results: Vec<(usize, Result<String, Failure>)> = ids
            .par_iter()
            .map(|&i| {
                let r = &records[i];
                let res = prompts
                    .build(r, a.regime, &fr_models)
                    .map_err(|e| Failure::Prompt(e.to_string()))
                    .and_then(|p| {
                        let images = (image_url(&a.image_url_prefix, &r.image_a), image_url(&a.image_url_prefix, &r.image_b));
                        client
                            .generate_explanation(&p, (&images.0, &images.1))
                            .map_err(Failure::Provider)
                    });
                (i, res)
            })
            .collect();
        let mut auth_failed = None;
        for (i, res) in results {
            let r = &mut records[i];
            match res {
                Ok(text) => {
                    r.regime = a.regime;
                    r.verdict = Some(parse_verdict(&text));
                    r.explanation = Some(text);
                    r.embedding = None;
                    generated += 1;
                }
                Err(Failure::Prompt(m)) => prompt_failures.push(format!("{}: {m}", r.pair_id)),
                Err(Failure::Provider(e)) => {
                    if e.is_auth() {
                        auth_failed = Some(e.to_string());
                    }
                    provider_failures.push(format!("{}: {e}", r.pair_id));
                }
            }
        }
        // Checkpoint after every chunk so an interrupted run resumes here.
        let snapshot = Manifest::new(records, metadata.clone())?;
        write_manifest(&snapshot, &out)?;
        records = snapshot.into_records();
        if let Some(m) = auth_failed {
            return Err(provider(format!("authentication rejected, stopping: {m}")));
        }
    }

    println!(
        "generated {generated} of {} pending explanations ({} prompt errors, {} provider errors) -> {}",
        pending.len(),
        prompt_failures.len(),
        provider_failures.len(),
        out.display()
    );
    for f in prompt_failures.iter().chain(&provider_failures) {
        eprintln!("  {f}");
    }
    if !provider_failures.is_empty() {
        return Err(provider(format!(
            "{} records failed at the provider; rerun to retry them",
            provider_failures.len()
        )));
    }
    if !prompt_failures.is_empty() {
        anyhow::bail!("{} records could not be prompted", prompt_failures.len());
    }
    Ok(())
}
