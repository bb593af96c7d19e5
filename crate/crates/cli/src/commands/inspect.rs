use reddot_core::model::{model_grad_check, ModelConfig, Variant};
use reddot_core::protocol::{attention_report, build_examples, point_biserial, AttentionReport};
use reddot_core::retrieval::{cosine_similarity, rank_all};
use reddot_core::store::{Dataset, Split};
use reddot_core::{Error, Result};
use serde::Serialize;

use super::training::{bundle_spec, load_model};
use super::{load_usable, PAR};
use crate::args::{GradcheckArgs, ReportArgs};
use crate::output::{print_json, table, write_json};

pub fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let variants = match &args.variant {
        Some(v) => vec![v.parse::<Variant>()?],
        None => Variant::ALL.to_vec(),
    };
    let mut worst: f64 = 0.0;
    for variant in variants {
        let config = ModelConfig { layers: args.layers, ff_width: 16, ..ModelConfig::new(variant, args.dim) };
        config.validate()?;
        let report = model_grad_check(&config, args.seed, args.tolerance)?;
        println!(
            "{:<9} parameters={:<6} max_abs_error={:.3e} max_rel_error={:.3e} {}",
            variant.as_str(),
            report.checked,
            report.max_abs_error,
            report.max_rel_error,
            if report.passed() { "ok" } else { "FAILED" }
        );
        worst = worst.max(report.max_rel_error);
    }
    println!("max relative error: {:.3e} (tolerance {:.0e})", worst, args.tolerance);
    if worst <= args.tolerance {
        Ok(())
    } else {
        Err(Error::Numerical(format!("gradient check failed: {:.3e} > {:.0e}", worst, args.tolerance)))
    }
}

#[derive(Serialize)]
struct Correlation {
    similarity: &'static str,
    pairs: usize,
    r: Option<f64>,
    p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

#[derive(Serialize)]
struct Report {
    split: Split,
    /// Point-biserial correlation of each similarity with the verdict label.
    correlations: Vec<Correlation>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    attention: Vec<AttentionReport>,
}

/// Similarities between claim features and top-ranked evidence, per pair.
/// Pairs with an empty pool are skipped for rows that need it.
fn correlations(dataset: &Dataset, split: Split) -> Result<Vec<Correlation>> {
    let pairs = &dataset.require_split(split)?.pairs;
    let sets = &dataset.matrices;
    let ranked = rank_all(pairs, sets, PAR)?;
    let mut rows: [(&'static str, Vec<f64>, Vec<u8>); 4] = [
        ("image_claim~text_claim", Vec::new(), Vec::new()),
        ("image_claim~image_evidence", Vec::new(), Vec::new()),
        ("text_claim~text_evidence", Vec::new(), Vec::new()),
        ("text_evidence~image_evidence", Vec::new(), Vec::new()),
    ];
    for p in pairs {
        let y = p.verdict.as_label();
        let r = &ranked[&p.pair_id];
        let image = sets.image_claim.require(&p.image_id)?;
        let text = sets.text_claim.require(&p.text_id)?;
        let mut push = |row: usize, s: f64| {
            rows[row].1.push(s);
            rows[row].2.push(y);
        };
        push(0, cosine_similarity(image, text)?);
        if let Some(&s) = r.image_scores.first() {
            push(1, s);
        }
        if let Some(&s) = r.text_scores.first() {
            push(2, s);
        }
        if let (Some(t), Some(i)) = (r.ranked_text_ids.first(), r.ranked_image_ids.first()) {
            push(3, cosine_similarity(sets.text_evidence.require(t)?, sets.image_evidence.require(i)?)?);
        }
    }
    Ok(rows
        .into_iter()
        .map(|(similarity, s, y)| match point_biserial(&s, &y) {
            Ok((r, p)) => Correlation { similarity, pairs: s.len(), r: Some(r), p: Some(p), note: None },
            Err(e) => Correlation { similarity, pairs: s.len(), r: None, p: None, note: Some(e.to_string()) },
        })
        .collect())
}

pub fn report(args: ReportArgs) -> Result<()> {
    let dataset = load_usable(&args.data)?;
    let split: Split = args.split.into();
    let correlations = correlations(&dataset, split)?;
    let mut attention = Vec::new();
    if let Some(path) = &args.checkpoint {
        let model = load_model(path)?;
        if !model.config.variant.uses_red() {
            return Err(Error::State(format!("variant {} produces no relevance scores", model.config.variant)));
        }
        let examples = build_examples(&dataset, split, &bundle_spec(&model.config, args.seed, false), PAR)?;
        for e in examples.iter().take(args.limit) {
            attention.push(attention_report(&model, e)?);
        }
    }
    let report = Report { split, correlations, attention };
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    if !args.table {
        return print_json(&report);
    }
    let fmt = |x: Option<f64>, prec: usize| x.map(|v| format!("{:.*}", prec, v)).unwrap_or_else(|| "-".into());
    let rows: Vec<Vec<String>> = report
        .correlations
        .iter()
        .map(|c| vec![c.similarity.to_owned(), c.pairs.to_string(), fmt(c.r, 2), c.p.map(|p| format!("{:.2e}", p)).unwrap_or_else(|| "-".into())])
        .collect();
    println!("{}", table(&["similarity", "pairs", "r", "p"], &rows));
    for a in &report.attention {
        println!("\n{} ({}, verdict probability {:.3})", a.pair_id, a.variant, a.verdict_probability);
        let rows: Vec<Vec<String>> = a
            .slots
            .iter()
            .map(|s| {
                vec![
                    s.slot.to_string(),
                    s.tag.clone(),
                    s.source_id.clone(),
                    format!("{:.4}", s.score),
                    format!("{:.3}", s.probability),
                    s.predicted_relevant.to_string(),
                    s.label.map(|l| l.to_string()).unwrap_or_else(|| "-".into()),
                ]
            })
            .collect();
        println!("{}", table(&["slot", "tag", "source", "score", "probability", "predicted", "label"], &rows));
    }
    Ok(())
}
