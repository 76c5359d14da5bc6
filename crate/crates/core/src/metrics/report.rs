//! CSV and JSON-lines renderings of metric reports.
//!
//! CSV headers follow the usual table column names (`Top1`, `Top5`, ...,
//! `CVI`). Accuracies are percentages printed with 4 decimals, CVI with 6.

use std::io::Write;

use serde_json::json;

use super::{CviReport, RetrievalReport, SweepCurve};

fn topk_header(ks: &[usize]) -> Vec<String> {
    ks.iter().map(|k| format!("Top{k}")).collect()
}

pub fn retrieval_csv<W: Write>(reports: &[RetrievalReport], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let ks: Vec<usize> = reports
        .first()
        .map(|r| r.topk.iter().map(|(k, _)| *k).collect())
        .unwrap_or_default();
    let mut header = vec!["Scope".to_string(), "Queries".to_string()];
    header.extend(topk_header(&ks));
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![r.scope.label().to_string(), r.n_queries().to_string()];
        row.extend(r.topk.iter().map(|(_, v)| format!("{v:.4}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn retrieval_jsonl<W: Write>(reports: &[RetrievalReport], mut out: W) -> std::io::Result<()> {
    for r in reports {
        let mut obj = serde_json::Map::new();
        obj.insert("scope".into(), json!(r.scope.label()));
        obj.insert("queries".into(), json!(r.n_queries()));
        for (k, v) in &r.topk {
            obj.insert(format!("top{k}"), json!(v));
        }
        serde_json::to_writer(&mut out, &obj)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn cvi_csv<W: Write>(report: &CviReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let ks: Vec<usize> = report
        .rows
        .iter()
        .find_map(|r| r.topk.as_ref())
        .map(|t| t.iter().map(|(k, _)| *k).collect())
        .unwrap_or_default();
    let mut header = vec!["Collection/Category".to_string()];
    header.extend(topk_header(&ks));
    header.push("CVI".into());
    w.write_record(&header)?;
    for r in &report.rows {
        let mut row = vec![r.collection.clone()];
        if let Some(t) = &r.topk {
            row.extend(t.iter().map(|(_, v)| format!("{v:.4}")));
        }
        row.push(format!("{:.6}", r.cvi));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cvi_jsonl<W: Write>(report: &CviReport, mut out: W) -> std::io::Result<()> {
    for r in &report.rows {
        let mut obj = serde_json::Map::new();
        obj.insert("collection".into(), json!(r.collection));
        obj.insert("n".into(), json!(r.n));
        obj.insert("alpha".into(), json!(report.alpha));
        obj.insert("cvi".into(), json!(r.cvi));
        obj.insert("sum_var_ii".into(), json!(r.terms.sum_var_ii));
        obj.insert("sum_var_tt".into(), json!(r.terms.sum_var_tt));
        obj.insert("sum_var_ti".into(), json!(r.terms.sum_var_ti));
        if let Some(t) = &r.topk {
            for (k, v) in t {
                obj.insert(format!("top{k}"), json!(v));
            }
        }
        serde_json::to_writer(&mut out, &obj)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn sweep_csv<W: Write>(curve: &SweepCurve, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["alpha", "jsd"])?;
    for (a, v) in &curve.points {
        w.write_record([format!("{a}"), format!("{v:.12}")])?;
    }
    w.flush()?;
    Ok(())
}
