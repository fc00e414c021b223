use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::commands::{Manifest, Metrics, AUDIT_CSV, LOSS_CSV, MANIFEST, METRICS, SUBSET_CSV};
use super::svg::{line_chart, Series};
use crate::error::{Error, Result};
use crate::eval::{AuditRow, AuditTable};

/// Artifacts `report` cannot do without; `subset.csv` is merged when present.
pub const REQUIRED_ARTIFACTS: [&str; 4] = [MANIFEST, LOSS_CSV, METRICS, AUDIT_CSV];

const REPORT_MD: &str = "report.md";

fn read(dir: &Path, name: &str) -> Result<String> {
    let p = dir.join(name);
    fs::read_to_string(&p).map_err(|e| Error::io(format!("reading {}", p.display()), e))
}

/// Config digest embedded in an artifact: the `config_digest` field of JSON files, or the
/// leading `# config_digest:` comment of CSV files.
pub fn read_digest(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    digest_of(&text)
        .ok_or_else(|| Error::Corruption(format!("{} carries no config digest", path.display())))
}

fn digest_of(text: &str) -> Option<String> {
    if let Some(rest) = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# config_digest: "))
    {
        return Some(rest.trim().to_string());
    }
    let v: serde_json::Value = serde_json::from_str(text).ok()?;
    v.get("config_digest")?.as_str().map(str::to_string)
}

/// Rows of a digest-prefixed CSV as raw strings, header first.
fn csv_rows(text: &str, name: &str) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    rdr.records()
        .map(|r| {
            r.map(|rec| rec.iter().map(str::to_string).collect())
                .map_err(|e| Error::Corruption(format!("{name}: {e}")))
        })
        .collect()
}

fn num(s: &str, name: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Corruption(format!("{name}: `{s}` is not a number")))
}

fn column(rows: &[Vec<String>], name: &str, col: &str) -> Result<usize> {
    rows.first()
        .and_then(|h| h.iter().position(|c| c == col))
        .ok_or_else(|| Error::Corruption(format!("{name} has no `{col}` column")))
}

fn markdown_table(s: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let _ = writeln!(s, "| {} |", header.join(" | "));
    let _ = writeln!(s, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(s, "| {} |", r.join(" | "));
    }
    s.push('\n');
}

pub(super) fn cmd_report(dir: &Path, out: &mut dyn Write) -> Result<()> {
    let missing: Vec<String> = REQUIRED_ARTIFACTS
        .iter()
        .filter(|n| !dir.join(n).is_file())
        .map(|n| n.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts {
            dir: dir.to_path_buf(),
            names: missing,
        });
    }
    let mut names: Vec<&str> = REQUIRED_ARTIFACTS.to_vec();
    if dir.join(SUBSET_CSV).is_file() {
        names.push(SUBSET_CSV);
    }
    let mut texts = Vec::new();
    let mut digests = Vec::new();
    for n in &names {
        let t = read(dir, n)?;
        let d = digest_of(&t)
            .ok_or_else(|| Error::Corruption(format!("{n} carries no config digest")))?;
        digests.push((*n, d));
        texts.push(t);
    }
    let digest = digests[0].1.clone();
    if digests.iter().any(|(_, d)| *d != digest) {
        let listing: Vec<String> = digests
            .iter()
            .map(|(n, d)| format!("{n}={}", &d[..d.len().min(12)]))
            .collect();
        return Err(Error::Config(format!(
            "artifacts come from different configs: {}",
            listing.join(", ")
        )));
    }

    let manifest: Manifest = serde_json::from_str(&texts[0])
        .map_err(|e| Error::Corruption(format!("{MANIFEST}: {e}")))?;
    let metrics: Metrics = serde_json::from_str(&texts[2])
        .map_err(|e| Error::Corruption(format!("{METRICS}: {e}")))?;
    let mut md = String::new();
    let _ = writeln!(md, "<!-- config_digest: {digest} -->");
    let _ = writeln!(md, "# Run report\n");
    let _ = writeln!(md, "- config digest: `{digest}`");
    let _ = writeln!(
        md,
        "- model: {:?}, master seed {}",
        manifest.model, manifest.seed
    );
    let _ = writeln!(
        md,
        "- epochs run: {} (best {}), stopped early: {}",
        manifest.epochs_run,
        manifest
            .best_epoch
            .map_or("none".to_string(), |b| b.to_string()),
        manifest.stopped_early
    );
    let _ = writeln!(
        md,
        "- checkpoint sha256: `{}`\n",
        manifest.checkpoint_sha256
    );

    // Training curve.
    let loss = csv_rows(&texts[1], LOSS_CSV)?;
    let (ce, ct, cv) = (
        column(&loss, LOSS_CSV, "epoch")?,
        column(&loss, LOSS_CSV, "train_loss")?,
        column(&loss, LOSS_CSV, "val_loss")?,
    );
    let _ = writeln!(md, "## Training\n");
    let header: Vec<&str> = loss[0].iter().map(String::as_str).collect();
    markdown_table(&mut md, &header, &loss[1..]);
    let mut train_pts = Vec::new();
    let mut val_pts = Vec::new();
    for r in &loss[1..] {
        let e = num(&r[ce], LOSS_CSV)?;
        train_pts.push((e, num(&r[ct], LOSS_CSV)?));
        val_pts.push((e, num(&r[cv], LOSS_CSV)?));
    }
    let svg = line_chart(
        "Loss",
        "epoch",
        "MAE (normalized)",
        &[
            Series {
                name: "train".into(),
                points: train_pts,
            },
            Series {
                name: "validation".into(),
                points: val_pts,
            },
        ],
        &digest,
    );
    write_file(dir, "loss.svg", &svg)?;
    let _ = writeln!(md, "![loss](loss.svg)\n");

    // Test metrics.
    let _ = writeln!(md, "## Test metrics\n");
    let mut rows = vec![
        vec![
            "unshuffled".to_string(),
            metrics.test.wape.to_string(),
            metrics.test.mae.to_string(),
        ],
        vec![
            "fully shuffled".to_string(),
            metrics.test_shuffled.wape.to_string(),
            metrics.test_shuffled.mae.to_string(),
        ],
    ];
    if let Some(ci) = &metrics.ci_only {
        rows.push(vec![
            "without spatial stage".to_string(),
            ci.wape.to_string(),
            ci.mae.to_string(),
        ]);
    }
    markdown_table(&mut md, &["evaluation", "WAPE (%)", "MAE"], &rows);

    // Shuffle audit.
    let audit = csv_rows(&texts[3], AUDIT_CSV)?;
    let col = |c: &str| column(&audit, AUDIT_CSV, c);
    let (cf, cr, cw, cm, cd) = (
        col("fraction")?,
        col("repeat")?,
        col("wape_pct")?,
        col("mae")?,
        col("degradation_ratio")?,
    );
    let mut audit_rows = Vec::new();
    for r in &audit[1..] {
        audit_rows.push(AuditRow {
            fraction: num(&r[cf], AUDIT_CSV)?,
            repeat: num(&r[cr], AUDIT_CSV)? as usize,
            wape_pct: num(&r[cw], AUDIT_CSV)?,
            mae: num(&r[cm], AUDIT_CSV)?,
            degradation_ratio: num(&r[cd], AUDIT_CSV)?,
        });
    }
    let table = AuditTable {
        base: metrics.test.clone(),
        rows: audit_rows,
    };
    let _ = writeln!(md, "## Channel-shuffle audit\n");
    let _ = writeln!(md, "{}", table.to_markdown());
    let summary = table.summary();
    let svg = line_chart(
        "Shuffle audit",
        "fraction of channels shuffled",
        "WAPE (%)",
        &[Series {
            name: "mean WAPE".into(),
            points: summary
                .iter()
                .map(|s| (s.fraction, s.mean_wape_pct))
                .collect(),
        }],
        &digest,
    );
    write_file(dir, "audit.svg", &svg)?;
    let _ = writeln!(md, "![audit](audit.svg)\n");

    // Subset-channel grid, cells copied verbatim.
    if let Some(text) = texts.get(4) {
        let grid = csv_rows(text, SUBSET_CSV)?;
        let (gf, gs, gw, gc) = (
            column(&grid, SUBSET_CSV, "fraction")?,
            column(&grid, SUBSET_CSV, "shuffle")?,
            column(&grid, SUBSET_CSV, "wape_pct")?,
            column(&grid, SUBSET_CSV, "trained_channels")?,
        );
        let mut fractions: Vec<String> = Vec::new();
        for r in &grid[1..] {
            if !fractions.contains(&r[gf]) {
                fractions.push(r[gf].clone());
            }
        }
        let cell = |f: &str, shuffle: &str, col: usize| -> String {
            grid[1..]
                .iter()
                .find(|r| r[gf] == f && r[gs] == shuffle)
                .map_or_else(|| "-".to_string(), |r| r[col].clone())
        };
        let rows: Vec<Vec<String>> = fractions
            .iter()
            .map(|f| {
                let channels = match cell(f, "true", gc).as_str() {
                    "-" => cell(f, "false", gc),
                    c => c.to_string(),
                };
                vec![
                    f.clone(),
                    channels,
                    cell(f, "true", gw),
                    cell(f, "false", gw),
                ]
            })
            .collect();
        let _ = writeln!(md, "## Subset-channel training\n");
        markdown_table(
            &mut md,
            &[
                "fraction",
                "trained channels",
                "WAPE (%) shuffle on",
                "WAPE (%) shuffle off",
            ],
            &rows,
        );
        let series = |shuffle: &str, name: &str| -> Result<Series> {
            let mut points = Vec::new();
            for r in grid[1..].iter().filter(|r| r[gs] == shuffle) {
                points.push((num(&r[gf], SUBSET_CSV)?, num(&r[gw], SUBSET_CSV)?));
            }
            Ok(Series {
                name: name.into(),
                points,
            })
        };
        let svg = line_chart(
            "Training on channel subsets",
            "fraction of channels used in training",
            "WAPE (%) on all channels",
            &[
                series("true", "shuffle on")?,
                series("false", "shuffle off")?,
            ],
            &digest,
        );
        write_file(dir, "subset.svg", &svg)?;
        let _ = writeln!(md, "![subset](subset.svg)\n");
    }

    let path = write_file(dir, REPORT_MD, &md)?;
    writeln!(out, "wrote {}", path.display()).ok();
    Ok(())
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<std::path::PathBuf> {
    let p = dir.join(name);
    fs::write(&p, text).map_err(|e| Error::io(format!("writing {}", p.display()), e))?;
    Ok(p)
}
