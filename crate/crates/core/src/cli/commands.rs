use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde_json::json;

use super::*;
use crate::components::{separate_collection, write_library, FileSource, SeparationConfig};
use crate::dynmask::{augment_stream, write_augmented, Fill, MaskPolicy};
use crate::embeddings::{l2_normalize, read_matrix, similarity, write_matrix, write_similarity, EmbeddingMatrix};
use crate::ingest::{
    fetch_collection, read_targets, FetchLimits, GatewayConfig, HttpTransport, RetryPolicy, ENV_CACHE_ROOT,
};
use crate::metadata::{build_trait_index, parse_metadata, render_caption_by_id, templates, AttributeList};
use crate::metrics::{alpha_sweep, cvi_report, report, topk_accuracy, topk_by_group, AlphaGrid, CviParams, SweepInput};
use crate::record::{split_key, Split, TokenRecord};
use crate::standardize::{
    plan_standardize, read_manifest, standardize_root, verify_manifest, FilterRules, PipelineConfig, SplitRatios,
};

pub(super) fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Ingest(a) => ingest(cli, g, a),
        Command::Standardize(a) => standardize(cli, g, a),
        Command::Caption(a) => caption(cli, g, a),
        Command::Separate(a) => separate(cli, g, a),
        Command::Augment(a) => augment(cli, g, a),
        Command::EmbedImport(a) => embed_import(cli, g, a),
        Command::EmbedInfo(a) => embed_info(a),
        Command::Similarity(a) => similarity_cmd(cli, g, a),
        Command::Eval(a) => eval(cli, g, a),
        Command::Cvi(a) => cvi_cmd(cli, g, a),
        Command::AlphaSweep(a) => sweep_cmd(cli, g, a),
        Command::Verify(a) => verify(a),
        Command::Replay(a) => replay(a),
    }
}

fn json_err(e: serde_json::Error) -> CliError {
    CliError::Io(e.to_string())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

fn print_json(v: &serde_json::Value) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, v).map_err(json_err)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Writes the snapshot into `dir`, or beside `file` as `<file>.run-config.json`.
fn snapshot(cli: &Cli, dir: Option<&Path>, file: Option<&Path>) -> Result<(), CliError> {
    let path = match (dir, file) {
        (Some(d), _) => d.join(RUN_CONFIG_FILE),
        (None, Some(f)) => {
            let mut name = f.file_name().unwrap_or_default().to_os_string();
            name.push(".");
            name.push(RUN_CONFIG_FILE);
            f.with_file_name(name)
        }
        (None, None) => return Ok(()),
    };
    let cfg = RunConfig {
        version: crate::VERSION.into(),
        command: cli.command.name().into(),
        cli: cli.clone(),
    };
    fs::write(&path, serde_json::to_vec_pretty(&cfg).map_err(json_err)?)?;
    Ok(())
}

fn dry_run(cli: &Cli, plan: serde_json::Value) -> Result<(), CliError> {
    print_json(&json!({"dry_run": true, "command": cli.command.name(), "plan": plan}))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            Box::new(io::BufWriter::new(fs::File::create(p)?))
        }
        None => Box::new(io::BufWriter::new(io::stdout())),
    })
}

fn ingest(cli: &Cli, g: &GlobalArgs, a: &IngestArgs) -> Result<(), CliError> {
    require_exists(&a.targets, "target list")?;
    let mut targets = read_targets(&a.targets)?;
    if !a.collections.is_empty() {
        targets.retain(|t| a.collections.contains(&t.name));
    }
    let root = a
        .out
        .clone()
        .or_else(|| std::env::var_os(ENV_CACHE_ROOT).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("nft-cache"));
    let limits = FetchLimits {
        concurrency: a.concurrency.max(1),
        per_host: a.per_host.max(1),
        retry: RetryPolicy {
            retries: a.retries,
            base_backoff: Duration::from_millis(a.backoff_ms),
            max_bytes: a.max_bytes,
            ..RetryPolicy::default()
        },
        ..FetchLimits::default()
    };
    let gateways = GatewayConfig::from_env();
    if g.dry_run {
        let plan: Vec<_> = targets
            .iter()
            .map(|t| json!({"collection": t.name, "tokens": t.id_count()}))
            .collect();
        return dry_run(cli, json!({"root": root, "gateways": gateways, "targets": plan}));
    }
    fs::create_dir_all(&root)?;
    snapshot(cli, Some(&root), None)?;
    let transport = HttpTransport::new(Duration::from_secs(a.timeout_secs));
    for t in &targets {
        let report = fetch_collection(t, &root, &gateways, &limits, &transport)?;
        fs::write(
            root.join(&t.name).join("download-report.json"),
            serde_json::to_vec_pretty(&report).map_err(json_err)?,
        )?;
        if !report.complete {
            log::warn!("{}: incomplete, {} tokens failed", t.name, report.failed.len());
        }
        print_json(&serde_json::to_value(&report).map_err(json_err)?)?;
    }
    Ok(())
}

fn standardize(cli: &Cli, g: &GlobalArgs, a: &StandardizeArgs) -> Result<(), CliError> {
    require_exists(&a.input, "input root")?;
    let ratios: SplitRatios = a.ratios.parse()?;
    templates()
        .create(&a.template)
        .map_err(crate::metadata::MetadataError::from)?;
    let cfg = PipelineConfig {
        seed: g.seed,
        ratios,
        rules: FilterRules {
            min_tokens: a.min_tokens,
        },
        template_id: a.template.clone(),
        keep_empty: a.keep_empty,
        collections: (!a.collections.is_empty()).then(|| a.collections.clone()),
    };
    if g.dry_run {
        let plans = plan_standardize(&a.input, cfg.collections.as_deref())?;
        let plan: Vec<_> = plans
            .iter()
            .map(|p| json!({"collection": p.collection, "media": p.media.len(), "meta": p.meta.len()}))
            .collect();
        return dry_run(cli, json!({"collections": plan}));
    }
    let summary = standardize_root(&a.input, &a.out, &cfg)?;
    snapshot(cli, Some(&a.out), None)?;
    print_json(&json!({
        "manifest": summary.manifest,
        "records": summary.records,
        "outcomes": summary.outcomes,
    }))
}

fn caption(cli: &Cli, g: &GlobalArgs, a: &CaptionArgs) -> Result<(), CliError> {
    let mut lines: Vec<serde_json::Value> = Vec::new();
    match (&a.manifest, &a.metadata) {
        (Some(m), _) => {
            require_exists(m, "manifest")?;
            let split = parse_split(a.split.as_deref())?;
            let manifest = read_manifest(m)?;
            for r in manifest.records.iter().filter(|r| split.is_none_or(|s| r.split == s)) {
                let c = render_caption_by_id(&a.template, &r.collection, &r.attributes)?;
                lines.push(json!({"id": r.key(), "caption": c.rendered()}));
            }
        }
        (None, Some(meta)) => {
            require_exists(meta, "metadata file")?;
            let collection = a
                .collection
                .as_deref()
                .ok_or_else(|| CliError::Usage("--metadata needs --collection".into()))?;
            let attrs: AttributeList = parse_metadata(&fs::read(meta)?)?;
            let c = render_caption_by_id(&a.template, collection, &attrs)?;
            let id = meta.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            lines.push(json!({"id": format!("{collection}/{id}"), "caption": c.rendered()}));
        }
        (None, None) => return Err(CliError::Usage("caption needs --manifest or --metadata".into())),
    }
    if g.dry_run {
        return dry_run(cli, json!({"captions": lines.len()}));
    }
    let mut out = output(a.out.as_deref())?;
    for l in &lines {
        serde_json::to_writer(&mut out, l).map_err(json_err)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    snapshot(cli, None, a.out.as_deref())
}

fn parse_split(s: Option<&str>) -> Result<Option<Split>, CliError> {
    s.map(|s| s.parse::<Split>().map_err(CliError::Usage)).transpose()
}

fn separate(cli: &Cli, g: &GlobalArgs, a: &SeparateArgs) -> Result<(), CliError> {
    require_exists(&a.manifest, "manifest")?;
    let manifest = read_manifest(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let cfg = SeparationConfig {
        group_size: a.k,
        rounds: a.rounds,
        tolerance: a.tolerance,
        min_support: a.support,
        seed: g.seed,
    };
    cfg.validate()?;
    let mut by_collection: BTreeMap<&str, Vec<&TokenRecord>> = BTreeMap::new();
    for r in &manifest.records {
        if a.collections.is_empty() || a.collections.contains(&r.collection) {
            by_collection.entry(&r.collection).or_default().push(r);
        }
    }
    if let Some(missing) = a.collections.iter().find(|c| !by_collection.contains_key(c.as_str())) {
        return Err(CliError::Usage(format!(
            "collection `{missing}` is not in the manifest"
        )));
    }
    if g.dry_run {
        let plan: BTreeMap<&str, usize> = by_collection.iter().map(|(c, r)| (*c, r.len())).collect();
        return dry_run(cli, json!({"collections": plan, "config": cfg}));
    }
    fs::create_dir_all(&a.library)?;
    for (collection, records) in &by_collection {
        let index = build_trait_index(records.iter().copied());
        let source = FileSource {
            paths: records.iter().map(|r| (r.token_id, base.join(&r.image))).collect(),
        };
        let lib = separate_collection(collection, &index, &source, &cfg)?;
        let dir = write_library(&lib, &a.library)?;
        print_json(&json!({
            "collection": collection,
            "components": lib.assets.len(),
            "skipped": lib.skipped.len(),
            "library": dir,
        }))?;
    }
    snapshot(cli, Some(&a.library), None)
}

fn augment(cli: &Cli, g: &GlobalArgs, a: &AugmentArgs) -> Result<(), CliError> {
    require_exists(&a.manifest, "manifest")?;
    let fill: Fill = a.fill.parse().map_err(CliError::Usage)?;
    let policy = MaskPolicy {
        p: a.p,
        fill,
        per_epoch_reseed: !a.no_reseed,
        seed: g.seed,
        mode: a.mode.clone(),
    };
    policy.validate()?;
    crate::dynmask::selectors()
        .create(&policy.mode)
        .map_err(crate::dynmask::DynmaskError::from)?;
    let manifest = read_manifest(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let stream = augment_stream(&manifest.records, base, &a.library, &policy, a.epoch)?;
    if g.dry_run {
        return dry_run(
            cli,
            json!({"train_tokens": stream.len(), "policy": policy, "epoch": a.epoch}),
        );
    }
    if a.out == "-" || a.out == "stream" {
        let mut out = io::BufWriter::new(io::stdout().lock());
        for item in stream {
            let v = match item {
                Ok(t) => json!({"record": t.record, "draw_seed": t.pair.plan.draw_seed}),
                Err(s) => json!({"skipped": s}),
            };
            serde_json::to_writer(&mut out, &v).map_err(json_err)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        return Ok(());
    }
    let dir = PathBuf::from(&a.out);
    fs::create_dir_all(&dir)?;
    let summary = write_augmented(&dir, stream)?;
    snapshot(cli, Some(&dir), None)?;
    print_json(&serde_json::to_value(summary).map_err(json_err)?)
}

fn read_vectors(path: &Path) -> Result<EmbeddingMatrix, CliError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default()
        .to_ascii_lowercase();
    let mut rows: Vec<(String, Vec<f32>)> = Vec::new();
    match ext.as_str() {
        "jsonl" | "ndjson" => {
            #[derive(serde::Deserialize)]
            struct Row {
                id: String,
                vector: Vec<f32>,
            }
            for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let r: Row = serde_json::from_str(&line)
                    .map_err(|e| CliError::Usage(format!("{} line {}: {e}", path.display(), i + 1)))?;
                rows.push((r.id, r.vector));
            }
        }
        "csv" => {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .from_path(path)
                .map_err(csv_err)?;
            for (i, rec) in rdr.records().enumerate() {
                let rec = rec.map_err(csv_err)?;
                let values: Result<Vec<f32>, _> = rec.iter().skip(1).map(|v| v.trim().parse::<f32>()).collect();
                match values {
                    Ok(v) => rows.push((rec.get(0).unwrap_or_default().to_string(), v)),
                    // a header row
                    Err(_) if i == 0 => continue,
                    Err(e) => return Err(CliError::Usage(format!("{} row {}: {e}", path.display(), i + 1))),
                }
            }
        }
        other => {
            return Err(CliError::Usage(format!(
                "unsupported vector file extension `{other}` (want .jsonl or .csv)"
            )))
        }
    }
    let dim = rows.first().map_or(0, |r| r.1.len());
    Ok(EmbeddingMatrix::from_rows(dim, rows)?)
}

fn embed_import(cli: &Cli, g: &GlobalArgs, a: &EmbedImportArgs) -> Result<(), CliError> {
    require_exists(&a.input, "input")?;
    let mut m = read_vectors(&a.input)?;
    if !a.no_normalize {
        m = l2_normalize(&m)?;
    }
    if g.dry_run {
        return dry_run(cli, json!({"rows": m.rows(), "dim": m.dim()}));
    }
    write_matrix(&m, &a.out)?;
    snapshot(cli, None, Some(&a.out))?;
    print_json(&json!({"out": a.out, "rows": m.rows(), "dim": m.dim()}))
}

fn embed_info(a: &EmbedInfoArgs) -> Result<(), CliError> {
    require_exists(&a.input, "input")?;
    let m = read_matrix(&a.input)?;
    let norms: Vec<f64> = (0..m.rows())
        .map(|i| m.row(i).iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt())
        .collect();
    let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
    let max = norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    print_json(&json!({
        "rows": m.rows(),
        "dim": m.dim(),
        "dtype": crate::embeddings::DTYPE,
        "min_norm": if norms.is_empty() { None } else { Some(min) },
        "max_norm": if norms.is_empty() { None } else { Some(max) },
        "first_ids": m.ids().iter().take(5).collect::<Vec<_>>(),
    }))
}

fn similarity_cmd(cli: &Cli, g: &GlobalArgs, a: &SimilarityArgs) -> Result<(), CliError> {
    require_exists(&a.left, "left matrix")?;
    require_exists(&a.right, "right matrix")?;
    let s = similarity(&read_matrix(&a.left)?, &read_matrix(&a.right)?)?;
    if g.dry_run {
        return dry_run(cli, json!({"rows": s.rows(), "cols": s.cols()}));
    }
    write_similarity(&s, &a.out)?;
    snapshot(cli, None, Some(&a.out))
}

/// Aligned, optionally normalized image and text matrices plus the records
/// they describe.
struct Loaded {
    records: Vec<TokenRecord>,
    images: EmbeddingMatrix,
    texts: EmbeddingMatrix,
}

fn load_inputs(m: &MatrixInputs) -> Result<Loaded, CliError> {
    require_exists(&m.images, "image embeddings")?;
    require_exists(&m.texts, "text embeddings")?;
    let mut images = read_matrix(&m.images)?;
    let mut texts = read_matrix(&m.texts)?;
    if !m.no_normalize {
        images = l2_normalize(&images)?;
        texts = l2_normalize(&texts)?;
    }
    let records = match &m.manifest {
        Some(path) => {
            require_exists(path, "manifest")?;
            let split = parse_split(m.split.as_deref())?;
            read_manifest(path)?
                .records
                .into_iter()
                .filter(|r| split.is_none_or(|s| r.split == s))
                .collect()
        }
        None => {
            if m.split.is_some() {
                return Err(CliError::Usage("--split needs --manifest".into()));
            }
            images
                .ids()
                .iter()
                .map(|id| record_from_id(id))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    if records.is_empty() {
        return Err(CliError::Usage("no tokens selected".into()));
    }
    let keys: Vec<String> = records.iter().map(TokenRecord::key).collect();
    Ok(Loaded {
        images: images.select(&keys)?,
        texts: texts.select(&keys)?,
        records,
    })
}

/// Minimal record for an embedding row id of the form `<collection>/<id>`.
fn record_from_id(id: &str) -> Result<TokenRecord, CliError> {
    let (collection, token_id) =
        split_key(id).ok_or_else(|| CliError::Usage(format!("row id `{id}` is not <collection>/<token_id>")))?;
    Ok(TokenRecord {
        collection: collection.into(),
        token_id,
        image: PathBuf::new(),
        caption: String::new(),
        template_id: String::new(),
        attributes: AttributeList::default(),
        split: Split::Test,
        frame_seed: None,
        masked_traits: None,
    })
}

fn collection_of(id: &str) -> String {
    split_key(id).map(|(c, _)| c.to_string()).unwrap_or_default()
}

fn eval(cli: &Cli, g: &GlobalArgs, a: &EvalArgs) -> Result<(), CliError> {
    let fmt = check_format(&a.format)?;
    let l = load_inputs(&a.inputs)?;
    if g.dry_run {
        return dry_run(cli, json!({"queries": l.records.len(), "k": a.k}));
    }
    // captions query images
    let s = similarity(&l.texts, &l.images)?;
    let truth: BTreeMap<String, String> = s.left_ids().iter().map(|k| (k.clone(), k.clone())).collect();
    let mut reports = vec![topk_accuracy(&s, &truth, &a.k)?];
    reports.extend(topk_by_group(&s, &truth, &a.k, collection_of)?);
    let mut out = output(a.out.as_deref())?;
    match fmt {
        "csv" => report::retrieval_csv(&reports, &mut out).map_err(csv_err)?,
        _ => report::retrieval_jsonl(&reports, &mut out)?,
    }
    out.flush()?;
    drop(out);
    snapshot(cli, None, a.out.as_deref())
}

fn check_format(f: &str) -> Result<&'static str, CliError> {
    match f {
        "csv" => Ok("csv"),
        "jsonl" => Ok("jsonl"),
        other => Err(CliError::Usage(format!("unknown format `{other}` (csv or jsonl)"))),
    }
}

fn cvi_cmd(cli: &Cli, g: &GlobalArgs, a: &CviArgs) -> Result<(), CliError> {
    let fmt = check_format(&a.format)?;
    let params = CviParams {
        alpha: a.alpha,
        variance: a.variance.clone(),
    };
    let l = load_inputs(&a.inputs)?;
    if g.dry_run {
        return dry_run(cli, json!({"tokens": l.records.len(), "alpha": a.alpha}));
    }
    let ks = (!a.k.is_empty()).then_some(a.k.as_slice());
    let rep = cvi_report(&l.records, &l.images, &l.texts, &params, ks)?;
    let mut out = output(a.out.as_deref())?;
    match fmt {
        "csv" => report::cvi_csv(&rep, &mut out).map_err(csv_err)?,
        _ => report::cvi_jsonl(&rep, &mut out)?,
    }
    out.flush()?;
    drop(out);
    snapshot(cli, None, a.out.as_deref())
}

fn sweep_cmd(cli: &Cli, g: &GlobalArgs, a: &AlphaSweepArgs) -> Result<(), CliError> {
    let grid: AlphaGrid = a.grid.parse()?;
    let l = load_inputs(&a.inputs)?;
    if g.dry_run {
        return dry_run(cli, json!({"tokens": l.records.len(), "grid": grid.values()}));
    }
    let rep = cvi_report(&l.records, &l.images, &l.texts, &CviParams::default(), Some(&[a.k]))?;
    let inputs: Vec<SweepInput> = rep
        .rows
        .iter()
        .map(|r| SweepInput {
            collection: r.collection.clone(),
            terms: r.terms,
            topk: r.topk.as_ref().and_then(|t| t.first()).map_or(0.0, |t| t.1),
        })
        .collect();
    let curve = alpha_sweep(&inputs, &grid)?;
    let mut out = output(a.out.as_deref())?;
    report::sweep_csv(&curve, &mut out).map_err(csv_err)?;
    out.flush()?;
    drop(out);
    log::info!("argmin alpha {} (jsd {:.6})", curve.argmin, curve.min_jsd);
    if a.out.is_some() {
        print_json(&json!({"argmin": curve.argmin, "min_jsd": curve.min_jsd}))?;
    }
    snapshot(cli, None, a.out.as_deref())
}

fn verify(a: &VerifyArgs) -> Result<(), CliError> {
    require_exists(&a.manifest, "manifest")?;
    let report = verify_manifest(&a.manifest)?;
    print_json(&serde_json::to_value(&report).map_err(json_err)?)?;
    report.into_result()?;
    Ok(())
}

fn replay(a: &ReplayArgs) -> Result<(), CliError> {
    require_exists(&a.config, "run config")?;
    let cfg: RunConfig = serde_json::from_slice(&fs::read(&a.config)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", a.config.display())))?;
    if matches!(cfg.cli.command, Command::Replay(_)) {
        return Err(CliError::Usage("a replay snapshot cannot replay itself".into()));
    }
    if cfg.version != crate::VERSION {
        log::warn!("snapshot written by nftkit {}, running {}", cfg.version, crate::VERSION);
    }
    run(cfg.cli)
}
