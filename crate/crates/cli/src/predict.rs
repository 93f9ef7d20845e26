use std::io::{self, BufRead, BufReader, Read};
use std::path::PathBuf;

use clap::Args;
use rescal::run::{self, TrainedModel};
use rescal::RescalError;
use serde_json::{json, Value};

use crate::Failure;

#[derive(Args)]
pub struct PredictArgs {
    /// Model file written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Entity dictionary (default: entities.tsv next to the model).
    #[arg(long)]
    entities: Option<PathBuf>,
    /// Relation dictionary (default: relations.tsv next to the model).
    #[arg(long)]
    relations: Option<PathBuf>,
    /// File of tab-separated queries, one per line; `-` reads stdin.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Keep only the best N candidates of a wildcard query.
    #[arg(long)]
    top: Option<usize>,
    /// Queries as "subject relation object" (whitespace separated); `?` marks
    /// the position to rank. Read from stdin when none are given.
    query: Vec<String>,
}

enum Slot {
    Subject,
    Relation,
    Object,
}

/// Scores one query. Plain queries give one `theta\tprob` line; wildcard
/// queries give `label\ttheta\tprob` lines, best first.
fn answer(trained: &TrainedModel, fields: &[&str], top: Option<usize>) -> Result<Vec<String>, String> {
    let [s, r, o] = fields else {
        return Err(format!("expected 3 fields, got {}", fields.len()));
    };
    let wild: Vec<Slot> = [(s, Slot::Subject), (r, Slot::Relation), (o, Slot::Object)]
        .into_iter()
        .filter(|(f, _)| **f == "?")
        .map(|(_, slot)| slot)
        .collect();
    if wild.len() > 1 {
        return Err("at most one position may be `?`".into());
    }
    let entity = |label: &str| trained.entities.get(label).ok_or_else(|| format!("unknown entity {label:?}"));
    let relation = |label: &str| trained.relations.get(label).ok_or_else(|| format!("unknown relation {label:?}"));
    let m = &trained.model;
    let line = |theta: f64, p: f64| format!("{theta}\t{p}");

    let Some(slot) = wild.first() else {
        let (i, k, j) = (entity(s)?, relation(r)?, entity(o)?);
        let theta = m.score(i, j, k).map_err(|e| e.to_string())?;
        let p = m.predict_proba(i, j, k).map_err(|e| e.to_string())?;
        return Ok(vec![line(theta, p)]);
    };

    let candidates = match slot {
        Slot::Relation => trained.relations.labels(),
        _ => trained.entities.labels(),
    };
    let mut scored = Vec::with_capacity(candidates.len());
    for c in 0..candidates.len() {
        let (i, k, j) = match slot {
            Slot::Subject => (c, relation(r)?, entity(o)?),
            Slot::Relation => (entity(s)?, c, entity(o)?),
            Slot::Object => (entity(s)?, relation(r)?, c),
        };
        let theta = m.score(i, j, k).map_err(|e| e.to_string())?;
        let p = m.predict_proba(i, j, k).map_err(|e| e.to_string())?;
        scored.push((c, theta, p));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(top.unwrap_or(usize::MAX));
    Ok(scored
        .into_iter()
        .map(|(c, theta, p)| format!("{}\t{}", candidates[c], line(theta, p)))
        .collect())
}

fn read_lines(path: &PathBuf) -> Result<Vec<String>, RescalError> {
    let reader: Box<dyn Read> = if path.as_os_str() == "-" {
        Box::new(io::stdin())
    } else {
        Box::new(std::fs::File::open(path).map_err(|e| RescalError::io(path, e))?)
    };
    BufReader::new(reader)
        .lines()
        .collect::<io::Result<Vec<_>>>()
        .map_err(|e| RescalError::io(path, e))
}

pub fn run(args: PredictArgs) -> Result<Value, Failure> {
    let trained = run::load_trained(&args.model, args.entities.as_deref(), args.relations.as_deref())?;
    let (queries, tab_separated) = if !args.query.is_empty() {
        (args.query.clone(), false)
    } else {
        (read_lines(args.queries.as_ref().unwrap_or(&PathBuf::from("-")))?, true)
    };

    let mut answered = 0;
    let mut failed = 0;
    for (n, q) in queries.iter().enumerate() {
        let q = q.trim();
        if q.is_empty() || q.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = if tab_separated && q.contains('\t') {
            q.split('\t').map(str::trim).collect()
        } else {
            q.split_whitespace().collect()
        };
        match answer(&trained, &fields, args.top) {
            Ok(lines) => {
                answered += 1;
                for l in lines {
                    println!("{l}");
                }
            }
            Err(msg) => {
                failed += 1;
                eprintln!("query {} ({q:?}): {msg}", n + 1);
            }
        }
    }
    if answered == 0 && failed > 0 {
        return Err(Failure::usage(format!("all {failed} queries failed")));
    }
    if answered == 0 {
        return Err(Failure::usage("no queries given"));
    }
    Ok(json!({ "command": "predict", "answered": answered, "failed": failed }))
}
