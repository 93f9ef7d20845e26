use std::io::Read;
use std::path::PathBuf;

use clap::Args;
use rescal::RescalError;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::Failure;

/// Largest download accepted, in bytes.
const MAX_BYTES: u64 = 512 << 20;

#[derive(Args)]
pub struct FetchArgs {
    /// Directory receiving NAME.tsv for every NAME=URL pair.
    #[arg(long)]
    output: PathBuf,
    /// Expected SHA-256 (hex) per dataset, as NAME=HEX.
    #[arg(long = "sha256", value_parser = parse_pair)]
    sha256: Vec<(String, String)>,
    /// Store the bytes without checking that they parse as triples.
    #[arg(long)]
    raw: bool,
    /// NAME=URL pairs; `file://` URLs are read from the local filesystem.
    #[arg(required = true, value_parser = parse_pair)]
    sources: Vec<(String, String)>,
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((name, value)) if !name.is_empty() && !value.is_empty() => {
            if name.contains(['/', '\\']) || name.starts_with('.') {
                return Err(format!("dataset name {name:?} must be a plain file stem"));
            }
            Ok((name.to_string(), value.to_string()))
        }
        _ => Err(format!("expected NAME=VALUE, got {s:?}")),
    }
}

fn download(url: &str) -> Result<Vec<u8>, Failure> {
    if let Some(path) = url.strip_prefix("file://") {
        return std::fs::read(path).map_err(|e| RescalError::io(path, e).into());
    }
    if !(url.starts_with("http://") || url.starts_with("https://")) {
        return Err(Failure::usage(format!("unsupported URL scheme in {url:?}")));
    }
    let mut response = ureq::get(url)
        .call()
        .map_err(|e| Failure::runtime(format!("{url}: {e}")))?;
    let mut body = Vec::new();
    response
        .body_mut()
        .as_reader()
        .take(MAX_BYTES + 1)
        .read_to_end(&mut body)
        .map_err(|e| Failure::runtime(format!("{url}: {e}")))?;
    if body.len() as u64 > MAX_BYTES {
        return Err(Failure::runtime(format!("{url}: larger than {MAX_BYTES} bytes")));
    }
    Ok(body)
}

pub fn run(args: FetchArgs) -> Result<Value, Failure> {
    std::fs::create_dir_all(&args.output).map_err(|e| RescalError::io(&args.output, e))?;
    let mut fetched = Vec::new();
    for (name, url) in &args.sources {
        let bytes = download(url)?;
        let digest = hex::encode(Sha256::digest(&bytes));
        if let Some((_, want)) = args.sha256.iter().find(|(n, _)| n == name) {
            if !want.eq_ignore_ascii_case(&digest) {
                return Err(Failure::runtime(format!("{name}: sha256 {digest} does not match {want}")));
            }
        }
        let triples = if args.raw {
            None
        } else {
            Some(rescal::io::parse_triples(bytes.as_slice(), url)?.len())
        };
        let path = args.output.join(format!("{name}.tsv"));
        rescal::io::write_atomic(&path, |w| w.write_all(&bytes))?;
        eprintln!("{name}: {} bytes -> {}", bytes.len(), path.display());
        fetched.push(json!({
            "name": name,
            "url": url,
            "path": path,
            "bytes": bytes.len(),
            "sha256": digest,
            "triples": triples,
        }));
    }
    Ok(json!({ "command": "fetch-data", "datasets": fetched }))
}
