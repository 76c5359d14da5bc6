//! Full pipeline over synthetic collections served by the mock server,
//! driven through the `nftkit` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use super::encoder::{jsonl_line, Encoder};
use super::server::MockServer;
use super::synth::{generate, SynthCollection, SynthSpec};
use super::{fixtures, raster_digest};

pub const SEED: &str = "11";

pub fn nftkit(args: &[&str], envs: &[(&str, String)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nftkit"));
    cmd.args(args).env_remove("NFTKIT_CACHE_ROOT").env("RUST_LOG", "warn");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn nftkit")
}

pub fn nftkit_ok(args: &[&str], envs: &[(&str, String)]) -> Output {
    let out = nftkit(args, envs);
    assert!(
        out.status.success(),
        "nftkit {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn collections() -> Vec<(SynthCollection, &'static str)> {
    let spec = |name: &str, seed: u64| SynthSpec {
        size: 128,
        tokens: 24,
        values: 3,
        block: 4,
        seed,
        ..SynthSpec::new(name, 24)
    };
    vec![
        (generate(&spec("alpha", 1)), "png"),
        (generate(&spec("beta", 2)), "png"),
        (generate(&spec("gamma", 3)), "webp"),
        // every token shares one image, so the filter drops it
        (
            generate(&SynthSpec {
                shared_background: true,
                values: 1,
                ..spec("dupes", 4)
            }),
            "png",
        ),
    ]
}

fn serve(server: &MockServer, work: &Path) -> PathBuf {
    let mut targets = String::new();
    for (coll, ext) in collections() {
        let name = &coll.spec.name;
        for t in &coll.tokens {
            let img = coll.compose(t);
            let (bytes, ct) = match ext {
                "webp" => (fixtures::animated_webp(&[img]), "image/webp"),
                _ => (fixtures::png(&img), "image/png"),
            };
            let media_path = format!("/ipfs/Qm{name}/{}.{ext}", t.id);
            server.add(&media_path, bytes, ct);
            let meta = coll.metadata_json(t, &format!("ipfs://Qm{name}/{}.{ext}", t.id));
            let meta_path = format!("/meta/{name}/{}.json", t.id);
            // a few transient failures to exercise retries
            if t.id % 5 == 0 {
                server.add_flaky(&meta_path, meta, "application/json", 1, 503);
            } else {
                server.add(&meta_path, meta, "application/json");
            }
        }
        targets.push_str(&format!(
            "{}\n",
            serde_json::json!({
                "name": name,
                "metadata_uri": server.url(&format!("/meta/{name}/{{id}}.json")),
                "first_id": 0,
                "last_id": coll.tokens.len() - 1,
            })
        ));
    }
    let path = work.join("targets.jsonl");
    fs::write(&path, targets).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn encode(work: &Path, manifest: &Path) -> (PathBuf, PathBuf) {
    let enc = Encoder::new(5);
    let text = fs::read_to_string(manifest).unwrap();
    let mut images = String::new();
    let mut texts = String::new();
    for line in text.lines().skip(1) {
        let r: nftkit::record::TokenRecord = serde_json::from_str(line).unwrap();
        let img = image::open(manifest.parent().unwrap().join(&r.image))
            .unwrap()
            .into_rgba8();
        images.push_str(&jsonl_line(&r.key(), &enc.image(&img)));
        texts.push_str(&jsonl_line(&r.key(), &enc.text(&r.caption)));
    }
    let (ij, tj) = (work.join("images.jsonl"), work.join("texts.jsonl"));
    fs::write(&ij, images).unwrap();
    fs::write(&tj, texts).unwrap();
    (ij, tj)
}

fn digests(dir: &Path, out: &mut Vec<String>, base: &Path) {
    let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            digests(&p, out, base);
        } else if p.extension().is_some_and(|e| e == "png") {
            let img = image::open(&p).unwrap().into_rgba8();
            let rel = p.strip_prefix(base).unwrap().to_string_lossy().replace('\\', "/");
            out.push(format!("{rel} {}", raster_digest(&img)));
        }
    }
}

/// Runs every stage in `work` and returns the golden artifacts by name.
pub fn run_pipeline(work: &Path) -> BTreeMap<String, Vec<u8>> {
    let server = MockServer::start();
    let targets = serve(&server, work);
    let gateways = format!("{}/gw-down,{}", server.base(), server.base());
    let env = [("NFTKIT_IPFS_GATEWAYS", gateways)];

    let cache = work.join("cache");
    let data = work.join("data");
    let lib = work.join("lib");
    let aug = work.join("aug");
    let out = work.join("out");
    fs::create_dir_all(&out).unwrap();
    let manifest = data.join("manifest.jsonl");

    nftkit_ok(
        &[
            "--seed",
            SEED,
            "ingest",
            "--targets",
            s(&targets),
            "--out",
            s(&cache),
            "--backoff-ms",
            "5",
            "--concurrency",
            "4",
            "--per-host",
            "4",
        ],
        &env,
    );
    nftkit_ok(
        &[
            "--seed",
            SEED,
            "standardize",
            "--input",
            s(&cache),
            "--out",
            s(&data),
            "--min-tokens",
            "10",
        ],
        &[],
    );
    nftkit_ok(
        &[
            "caption",
            "--manifest",
            s(&manifest),
            "--out",
            s(&out.join("captions.jsonl")),
        ],
        &[],
    );
    nftkit_ok(
        &[
            "--seed",
            SEED,
            "separate",
            "--manifest",
            s(&manifest),
            "--library",
            s(&lib),
        ],
        &[],
    );
    nftkit_ok(
        &[
            "--seed",
            SEED,
            "augment",
            "--manifest",
            s(&manifest),
            "--library",
            s(&lib),
            "--p",
            "0.5",
            "--out",
            s(&aug),
        ],
        &[],
    );
    let (ij, tj) = encode(work, &manifest);
    let (ie, te) = (work.join("images.emb"), work.join("texts.emb"));
    nftkit_ok(&["embed-import", "--input", s(&ij), "--out", s(&ie)], &[]);
    nftkit_ok(&["embed-import", "--input", s(&tj), "--out", s(&te)], &[]);
    let matrices = ["--images", s(&ie), "--texts", s(&te), "--manifest", s(&manifest)];
    let eval_out = out.join("eval.csv");
    let cvi_out = out.join("cvi.csv");
    let sweep_out = out.join("sweep.csv");
    nftkit_ok(&[&["eval"][..], &matrices, &["--out", s(&eval_out)]].concat(), &[]);
    nftkit_ok(&[&["cvi"][..], &matrices, &["--out", s(&cvi_out)]].concat(), &[]);
    nftkit_ok(
        &[&["alpha-sweep"][..], &matrices, &["--out", s(&sweep_out)]].concat(),
        &[],
    );

    let mut pngs = Vec::new();
    digests(&data, &mut pngs, work);
    digests(&lib, &mut pngs, work);
    digests(&aug, &mut pngs, work);
    let mut golden = BTreeMap::new();
    let mut add = |name: &str, path: PathBuf| {
        golden.insert(
            name.to_string(),
            fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display())),
        );
    };
    add("manifest.jsonl", manifest.clone());
    add("verdicts.jsonl", data.join("verdicts.jsonl"));
    add("captions.jsonl", out.join("captions.jsonl"));
    for c in ["alpha", "beta", "gamma"] {
        add(
            &format!("library-{c}.json"),
            lib.join(c).join("components").join("library.json"),
        );
    }
    add("augmented.jsonl", aug.join("manifest.jsonl"));
    add("eval.csv", eval_out);
    add("cvi.csv", cvi_out);
    add("sweep.csv", sweep_out);
    golden.insert("rasters.txt".into(), (pngs.join("\n") + "\n").into_bytes());
    golden
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

/// Compares against the committed files; with `UPDATE_GOLDEN=1` rewrites
/// them instead. Returns the names that differ.
pub fn check_golden(outputs: &BTreeMap<String, Vec<u8>>) -> Vec<String> {
    let dir = golden_dir();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(&dir).unwrap();
        for (name, bytes) in outputs {
            fs::write(dir.join(name), bytes).unwrap();
        }
        return Vec::new();
    }
    outputs
        .iter()
        .filter(|(name, bytes)| fs::read(dir.join(name)).ok().as_ref() != Some(*bytes))
        .map(|(name, _)| name.clone())
        .collect()
}
