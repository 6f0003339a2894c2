//! Writing run outputs to disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::chains::Axis;
use crate::config::OutputConfig;
use crate::error::{Error, Result};
use crate::pipeline::{ChainArtifacts, RunOutput};

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(csv_err)
}

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

fn write_nodes(path: &Path, art: &ChainArtifacts) -> Result<()> {
    let window = &art.graph.window;
    let mut w = writer(path)?;
    let mut header = vec!["set".to_string(), "node".to_string()];
    header.extend((0..window.axes().len()).map(|k| format!("c{k}")));
    w.write_record(&header).map_err(csv_err)?;
    for (s, set) in art.sets.iter().enumerate() {
        for &id in &set.nodes {
            let mut rec = vec![s.to_string(), id.to_string()];
            rec.extend(window.center_coords(id).into_iter().map(fmt));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_edges(path: &Path, art: &ChainArtifacts, all: bool) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["from", "to", "control", "time", "direct", "set"]).map_err(csv_err)?;
    let set_of: BTreeMap<u64, usize> = art
        .sets
        .iter()
        .enumerate()
        .flat_map(|(k, s)| s.nodes.iter().map(move |n| (*n, k)))
        .collect();
    for e in &art.graph.edges {
        let (a, b) = (set_of.get(&e.from), set_of.get(&e.to));
        let internal = matches!((a, b), (Some(x), Some(y)) if x == y);
        if !(all || internal) {
            continue;
        }
        let set = if internal { a.map(|k| k.to_string()).unwrap_or_default() } else { String::new() };
        w.write_record([
            e.from.to_string(),
            e.to.to_string(),
            e.control.to_string(),
            e.time.to_string(),
            e.direct.to_string(),
            set,
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Projections of every set onto each pair of interval axes, with node counts
/// per projected cell.
fn write_plotdata(dir: &Path, art: &ChainArtifacts) -> Result<Vec<PathBuf>> {
    let window = &art.graph.window;
    let axes: Vec<usize> = window
        .axes()
        .iter()
        .enumerate()
        .filter(|(_, a)| matches!(a, Axis::Interval { .. }))
        .map(|(k, _)| k)
        .collect();
    let mut out = Vec::new();
    if axes.len() < 2 && !axes.is_empty() {
        let path = dir.join(format!("set_axis_{}.csv", axes[0]));
        let mut w = writer(&path)?;
        w.write_record(["set", "c", "nodes"]).map_err(csv_err)?;
        for (s, set) in art.sets.iter().enumerate() {
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for &id in &set.nodes {
                *counts.entry(window.multi_index(id)[axes[0]]).or_default() += 1;
            }
            for (i, n) in counts {
                w.write_record([s.to_string(), fmt(window.axes()[axes[0]].center(i)), n.to_string()])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;
        out.push(path);
    }
    for (p, &a) in axes.iter().enumerate() {
        for &b in &axes[p + 1..] {
            let path = dir.join(format!("set_axes_{a}_{b}.csv"));
            let mut w = writer(&path)?;
            w.write_record(["set", "ca", "cb", "nodes"]).map_err(csv_err)?;
            for (s, set) in art.sets.iter().enumerate() {
                let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
                for &id in &set.nodes {
                    let m = window.multi_index(id);
                    *counts.entry((m[a], m[b])).or_default() += 1;
                }
                for ((i, j), n) in counts {
                    w.write_record([
                        s.to_string(),
                        fmt(window.axes()[a].center(i)),
                        fmt(window.axes()[b].center(j)),
                        n.to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
            w.flush()?;
            out.push(path);
        }
    }
    Ok(out)
}

fn write_chain(dir: &Path, art: &ChainArtifacts, opts: &OutputConfig) -> Result<Vec<PathBuf>> {
    let mut out = vec![dir.join("nodes.csv"), dir.join("edges.csv")];
    write_nodes(&out[0], art)?;
    write_edges(&out[1], art, opts.all_edges)?;
    if opts.plotdata {
        let pd = dir.join("plotdata");
        fs::create_dir_all(&pd)?;
        out.extend(write_plotdata(&pd, art)?);
    }
    Ok(out)
}

/// Writes the report, timings and command artifacts under `dir`; returns the
/// paths written.
pub fn write_outputs(dir: &Path, run: &RunOutput, opts: &OutputConfig) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let report = dir.join("report.json");
    fs::write(&report, run.report.to_json() + "\n")?;
    written.push(report);
    let timings = dir.join("timings.json");
    fs::write(&timings, serde_json::to_string_pretty(&run.timings).expect("timings serialize") + "\n")?;
    written.push(timings);
    if let Some(traj) = &run.artifacts.trajectory {
        let path = dir.join("trajectory.csv");
        let mut w = writer(&path)?;
        if let Some((_, p)) = traj.first() {
            let mut header = vec!["t".to_string()];
            header.extend((0..p.h.len()).map(|k| format!("h{k}")));
            header.extend((0..p.x.len()).map(|k| format!("x{k}")));
            w.write_record(&header).map_err(csv_err)?;
        }
        for (t, p) in traj {
            let mut rec = vec![fmt(*t)];
            rec.extend(p.h.iter().chain(p.x.iter()).map(|v| fmt(*v)));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        written.push(path);
    }
    if let Some(art) = &run.artifacts.chain {
        written.extend(write_chain(dir, art, opts)?);
    }
    if let Some((text, art)) = &run.artifacts.downstairs {
        let path = dir.join("downstairs.toml");
        fs::write(&path, text)?;
        written.push(path);
        let sub = dir.join("downstairs");
        fs::create_dir_all(&sub)?;
        written.extend(write_chain(&sub, art, opts)?);
    }
    if !run.artifacts.mapping.is_empty() {
        let path = dir.join("mapping.csv");
        let mut w = writer(&path)?;
        let m = &run.artifacts.mapping[0];
        let mut header: Vec<String> = (0..m.up.len()).map(|k| format!("up{k}")).collect();
        header.extend((0..m.down.len()).map(|k| format!("down{k}")));
        w.write_record(&header).map_err(csv_err)?;
        for m in &run.artifacts.mapping {
            let rec: Vec<String> = m.up.iter().chain(m.down.iter()).map(|v| fmt(*v)).collect();
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}
