use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use clap::Args;
use lrexplain_core::bundle::ModelBundle;
use lrexplain_core::data::{Manifest, PairLabel, PairRecord, Verdict};
use lrexplain_core::embedding::{Embedder, EmbeddingVector};
use lrexplain_core::json;
use lrexplain_core::lr::read_score_file;
use lrexplain_core::metrics::confusion::{COLUMNS, ROWS};
use lrexplain_core::metrics::{
    confusion, eer, project_2d, roc_from_scores, separability, tmr_at_fmr, ConfusionMatrix3x2,
    EmbeddingSpace, RocCurve, SeparabilityReport,
};
use serde::Serialize;
use serde_json::{json, Value};

use super::{read_manifest, write_text};
use crate::embedders;
use crate::error::usage;
use crate::Context;

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Score files from `score`; one report series per file.
    #[arg(long = "scores", required = true, num_args = 1..)]
    scores: Vec<PathBuf>,
    /// Manifests supplying labels and embeddings: one shared by all score
    /// files, or one per score file in the same order.
    #[arg(long = "manifest", num_args = 1..)]
    manifests: Vec<PathBuf>,
    /// Series names, one per score file (default: file stem).
    #[arg(long = "name", num_args = 1..)]
    names: Vec<String>,
    /// Bundle whose PCA gives the reduced-space separability report.
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// FMR operating points reported in the summary.
    #[arg(long = "fmr", num_args = 1.., default_values_t = [1e-4, 1e-3, 1e-2, 1e-1])]
    fmrs: Vec<f64>,
    /// Output directory.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Serialize)]
struct JoinFailure {
    pair_id: String,
    reason: String,
}

struct Series {
    name: String,
    summary: Value,
    roc: RocCurve,
    confusion: ConfusionMatrix3x2,
    projection: Vec<(String, lrexplain_core::metrics::ProjectedPoint)>,
}

fn series_names(a: &EvaluateArgs) -> anyhow::Result<Vec<String>> {
    if !a.names.is_empty() {
        if a.names.len() != a.scores.len() {
            return Err(usage(format!(
                "{} --name values for {} score files",
                a.names.len(),
                a.scores.len()
            )));
        }
        return Ok(a.names.clone());
    }
    let mut seen: HashMap<String, usize> = HashMap::new();
    Ok(a.scores
        .iter()
        .map(|p| {
            let stem = p.file_stem().map_or("scores".into(), |s| s.to_string_lossy().into_owned());
            let n = seen.entry(stem.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                stem
            } else {
                format!("{stem}-{n}")
            }
        })
        .collect())
}

fn fmt_f64(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x}")
    }
}

/// Embeddings for the labelled records of one series.
fn vectors_for(
    ids: &[(String, PairLabel)],
    manifest: Option<&Manifest>,
    embedder: Option<&dyn Embedder>,
) -> (Vec<(String, PairLabel, EmbeddingVector)>, usize) {
    let Some(m) = manifest else {
        return (Vec::new(), ids.len());
    };
    let mut have = Vec::new();
    let mut to_embed: Vec<(&str, PairLabel, &str)> = Vec::new();
    let mut unavailable = 0;
    for (id, label) in ids {
        match m.get(id) {
            Some(PairRecord { embedding: Some(e), .. }) => have.push((id.clone(), *label, e.clone())),
            Some(PairRecord { explanation: Some(t), .. }) if embedder.is_some() && !t.trim().is_empty() => {
                to_embed.push((id, *label, t))
            }
            _ => unavailable += 1,
        }
    }
    if let Some(e) = embedder {
        let texts: Vec<&str> = to_embed.iter().map(|(_, _, t)| *t).collect();
        for ((id, label, _), out) in to_embed.iter().zip(e.embed_many(&texts)) {
            match out {
                Ok(v) => have.push((id.to_string(), *label, v)),
                Err(err) => {
                    log::warn!("embedding {id} for separability failed: {err}");
                    unavailable += 1;
                }
            }
        }
    }
    (have, unavailable)
}

fn separability_reports(
    vectors: &[(String, PairLabel, EmbeddingVector)],
    bundle: Option<&ModelBundle>,
) -> anyhow::Result<(Option<SeparabilityReport>, Option<SeparabilityReport>)> {
    let class = |l: PairLabel| -> Vec<&[f64]> {
        vectors.iter().filter(|v| v.1 == l).map(|v| v.2.values()).collect()
    };
    let (g, i) = (class(PairLabel::Genuine), class(PairLabel::Impostor));
    if g.len() < 2 || i.len() < 2 {
        return Ok((None, None));
    }
    let original = separability(&g, &i, EmbeddingSpace::OriginalEmbedding)?;
    let reduced = match bundle {
        Some(b) if vectors.iter().all(|v| v.2.provider_tag() == b.provider_tag) => {
            let rg = b.pca.transform_rows(&g)?;
            let ri = b.pca.transform_rows(&i)?;
            let rows = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
                m.row_iter().map(|r| r.iter().copied().collect()).collect()
            };
            Some(separability(&rows(&rg), &rows(&ri), EmbeddingSpace::PcaReduced)?)
        }
        Some(b) => {
            log::warn!(
                "embeddings are not in the bundle's space {:?}; skipping reduced-space separability",
                b.provider_tag
            );
            None
        }
        None => None,
    };
    Ok((Some(original), reduced))
}

fn evaluate_one(
    name: &str,
    path: &Path,
    manifest: Option<&Manifest>,
    bundle: Option<&ModelBundle>,
    embedder: Option<&dyn Embedder>,
    fmrs: &[f64],
) -> anyhow::Result<Series> {
    let lines = read_score_file(path).with_context(|| format!("reading scores {}", path.display()))?;
    if lines.is_empty() {
        return Err(usage(format!("score file {} is empty", path.display())));
    }

    let mut failures = Vec::new();
    let mut labelled: Vec<(String, PairLabel, f64, Verdict)> = Vec::new();
    for l in &lines {
        let label = match (l.label, manifest.map(|m| m.get(&l.pair_id))) {
            (Some(label), _) if label.is_known() => Some(label),
            (_, Some(Some(r))) if r.label.is_known() => Some(r.label),
            (_, Some(Some(_))) => {
                failures.push(JoinFailure { pair_id: l.pair_id.clone(), reason: "label unknown in manifest".into() });
                None
            }
            (_, Some(None)) => {
                failures.push(JoinFailure { pair_id: l.pair_id.clone(), reason: "pair_id not in manifest".into() });
                None
            }
            (_, None) => {
                failures.push(JoinFailure { pair_id: l.pair_id.clone(), reason: "no label and no manifest given".into() });
                None
            }
        };
        if let Some(label) = label {
            labelled.push((l.pair_id.clone(), label, l.log_lr, l.verdict));
        }
    }
    if !failures.is_empty() {
        eprintln!(
            "{name}: {} scored records have no usable label and are excluded (listed in summary.json)",
            failures.len()
        );
    }

    let scores = |want: PairLabel| -> Vec<f64> {
        labelled.iter().filter(|r| r.1 == want).map(|r| r.2).collect()
    };
    let roc = roc_from_scores(&scores(PairLabel::Genuine), &scores(PairLabel::Impostor))
        .with_context(|| format!("{name}: ROC needs both genuine and impostor scores"))?;
    let conf = confusion(&labelled.iter().map(|r| (r.1, r.3)).collect::<Vec<_>>())?;

    let ids: Vec<(String, PairLabel)> = labelled.iter().map(|r| (r.0.clone(), r.1)).collect();
    let (vectors, unavailable) = vectors_for(&ids, manifest, embedder);
    let (sep_original, sep_reduced) = separability_reports(&vectors, bundle)?;
    let projection = if vectors.len() >= 3 {
        let rows: Vec<&[f64]> = vectors.iter().map(|v| v.2.values()).collect();
        let labels: Vec<PairLabel> = vectors.iter().map(|v| v.1).collect();
        match project_2d(&rows, &labels) {
            Ok(p) => vectors.iter().map(|v| v.0.clone()).zip(p).collect(),
            Err(e) => {
                log::warn!("{name}: no 2-D projection: {e}");
                Vec::new()
            }
        }
    } else {
        Vec::new()
    };

    let operating: BTreeMap<String, f64> = fmrs
        .iter()
        .map(|&f| (format!("{f:e}"), tmr_at_fmr(&roc, f)))
        .collect();
    let confusion_json: Value = ROWS
        .iter()
        .map(|&row| {
            let cells: serde_json::Map<String, Value> = COLUMNS
                .iter()
                .map(|&col| {
                    (
                        col.as_str().to_string(),
                        json!({
                            "count": conf.count(row, col),
                            "proportion": conf.proportion(row, col),
                            "display": conf.display(row, col),
                        }),
                    )
                })
                .collect();
            (row.as_str().to_string(), Value::Object(cells))
        })
        .collect::<serde_json::Map<String, Value>>()
        .into();

    let n_genuine = labelled.iter().filter(|r| r.1 == PairLabel::Genuine).count();
    let summary = json!({
        "name": name,
        "score_file": path.display().to_string(),
        "n_scored": lines.len(),
        "n_labelled": labelled.len(),
        "n_genuine": n_genuine,
        "n_impostor": labelled.len() - n_genuine,
        "auc": roc.auc,
        "eer": eer(&roc),
        "tmr_at_fmr": operating,
        "confusion": confusion_json,
        "confusion_empty_rows": {
            "genuine": conf.empty_rows[0],
            "impostor": conf.empty_rows[1],
        },
        "separability": {
            "original_embedding": sep_original,
            "pca_reduced": sep_reduced,
            "records_without_embedding": unavailable,
        },
        "join_failures": failures,
    });
    Ok(Series {
        name: name.to_string(),
        summary,
        roc,
        confusion: conf,
        projection,
    })
}

pub fn run(ctx: &Context, a: EvaluateArgs) -> anyhow::Result<()> {
    if !(a.manifests.is_empty() || a.manifests.len() == 1 || a.manifests.len() == a.scores.len()) {
        return Err(usage(format!(
            "give one --manifest for all score files or one per score file ({} for {})",
            a.manifests.len(),
            a.scores.len()
        )));
    }
    if let Some(f) = a.fmrs.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
        return Err(usage(format!("FMR operating point {f} must lie in (0, 1)")));
    }
    let names = series_names(&a)?;
    let bundle = match &a.bundle {
        Some(p) => Some(ModelBundle::read(p).with_context(|| format!("reading bundle {}", p.display()))?),
        None => None,
    };
    let manifests: Vec<Manifest> = a.manifests.iter().map(|p| read_manifest(p)).collect::<anyhow::Result<_>>()?;
    let embedder = match (&bundle, a.manifests.first()) {
        (Some(b), Some(m)) => embedders::for_tag(&b.provider_tag, &ctx.file.embedding, m, ctx.parallelism)?,
        _ => None,
    };

    let mut all = Vec::with_capacity(a.scores.len());
    for (i, path) in a.scores.iter().enumerate() {
        let manifest = match manifests.len() {
            0 => None,
            1 => Some(&manifests[0]),
            _ => Some(&manifests[i]),
        };
        all.push(evaluate_one(&names[i], path, manifest, bundle.as_ref(), embedder.as_deref(), &a.fmrs)?);
    }

    let mut roc_csv = String::from("series,fmr,tmr,threshold\n");
    let mut conf_csv = String::from("series,truth,verdict,count,proportion,display\n");
    let mut proj_csv = String::from("series,pair_id,label,x,y\n");
    for s in &all {
        for p in &s.roc.points {
            writeln!(roc_csv, "{},{},{},{}", s.name, fmt_f64(p.fmr), fmt_f64(p.tmr), fmt_f64(p.threshold))?;
        }
        for &row in &ROWS {
            for &col in &COLUMNS {
                writeln!(
                    conf_csv,
                    "{},{},{},{},{},{}",
                    s.name,
                    row.as_str(),
                    col.as_str(),
                    s.confusion.count(row, col),
                    fmt_f64(s.confusion.proportion(row, col)),
                    s.confusion.display(row, col)
                )?;
            }
        }
        for (id, p) in &s.projection {
            writeln!(proj_csv, "{},{},{},{},{}", s.name, id, p.label.as_str(), fmt_f64(p.x), fmt_f64(p.y))?;
        }
    }
    let summary = json!({
        "roc_convention": "score >= threshold is a predicted match; AUC counts ties as one half",
        "series": all.iter().map(|s| s.summary.clone()).collect::<Vec<_>>(),
    });

    write_text(&a.out_dir.join("roc.csv"), &roc_csv)?;
    write_text(&a.out_dir.join("confusion.csv"), &conf_csv)?;
    write_text(&a.out_dir.join("projection_2d.csv"), &proj_csv)?;
    write_text(&a.out_dir.join("summary.json"), &(json::to_pretty(&summary)? + "\n"))?;

    for s in &all {
        println!(
            "{}: AUC {:.4}, EER {:.4}, genuine match {}, impostor non-match {}",
            s.name,
            s.roc.auc,
            eer(&s.roc),
            s.confusion.display(PairLabel::Genuine, Verdict::Match),
            s.confusion.display(PairLabel::Impostor, Verdict::NonMatch)
        );
    }
    println!("reports written to {}", a.out_dir.display());
    Ok(())
}
