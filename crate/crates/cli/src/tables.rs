//! CSV tables. Every table starts with a `format_version` column and uses
//! 1-based ids.

use std::path::Path;

use anyhow::Result;
use fairroute::io::{write_atomic, FORMAT_VERSION};
use fairroute::network::Network;
use serde::Serialize;

#[derive(Serialize)]
struct CommunityRow {
    format_version: u32,
    community: usize,
    allocation: f64,
}

#[derive(Serialize)]
struct LinkRow {
    format_version: u32,
    link: usize,
    tail: usize,
    head: usize,
    flow: f64,
}

#[derive(Serialize)]
struct CompareRow {
    format_version: u32,
    community: usize,
    fair: f64,
    maxsum: f64,
}

#[derive(Serialize)]
pub struct SweepRow {
    format_version: u32,
    delta: f64,
    community: usize,
    allocation: f64,
    objective: &'static str,
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

pub fn write_communities(path: &Path, x: &[f64]) -> Result<()> {
    let rows = x.iter().enumerate().map(|(k, &allocation)| CommunityRow {
        format_version: FORMAT_VERSION,
        community: k + 1,
        allocation,
    });
    Ok(write_atomic(path, &to_csv(rows)?)?)
}

pub fn write_links(path: &Path, network: &Network, y: &[f64]) -> Result<()> {
    let rows = network.links.iter().zip(y).enumerate().map(|(l, (&(t, h), &flow))| LinkRow {
        format_version: FORMAT_VERSION,
        link: l + 1,
        tail: t + 1,
        head: h + 1,
        flow,
    });
    Ok(write_atomic(path, &to_csv(rows)?)?)
}

pub fn write_compare(path: &Path, fair: &[f64], maxsum: &[f64]) -> Result<()> {
    let rows = fair.iter().zip(maxsum).enumerate().map(|(k, (&f, &m))| CompareRow {
        format_version: FORMAT_VERSION,
        community: k + 1,
        fair: f,
        maxsum: m,
    });
    Ok(write_atomic(path, &to_csv(rows)?)?)
}

pub fn sweep_rows(delta: f64, objective: &'static str, x: &[f64]) -> Vec<SweepRow> {
    x.iter()
        .enumerate()
        .map(|(k, &allocation)| SweepRow {
            format_version: FORMAT_VERSION,
            delta,
            community: k + 1,
            allocation,
            objective,
        })
        .collect()
}

/// Body lines only, so per-point files can be concatenated under one header.
pub fn sweep_body(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

pub fn sweep_header() -> &'static [u8] {
    b"format_version,delta,community,allocation,objective\n"
}
