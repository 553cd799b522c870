//! CSV writers. All files carry a header row; floats are printed with
//! Rust's shortest round-trip formatting, which is locale-independent
//! and byte-stable across runs of the same build.

use anyhow::Result;
use riiu_core::agent::{EpisodeRow, StepRow};
use riiu_core::oracle::CalibrationRow;
use std::io::Write;
use std::path::Path;

pub fn write_episodes(path: &Path, rows: &[(String, u64, &[EpisodeRow])]) -> Result<()> {
    let mut out = String::from("variant,seed,episode,mean_return,phi_rel_percent\n");
    for (variant, seed, episodes) in rows {
        for e in episodes.iter() {
            out.push_str(&format!(
                "{variant},{seed},{},{},{}\n",
                e.episode, e.mean_return, e.phi_rel_percent
            ));
        }
    }
    write_file(path, out.as_bytes())
}

pub fn write_steps(path: &Path, rows: &[(String, u64, &[StepRow])]) -> Result<()> {
    let mut out = String::from("variant,seed,global_step,mean_reward,phi_rel_percent,damaged\n");
    for (variant, seed, steps) in rows {
        for s in steps.iter() {
            out.push_str(&format!(
                "{variant},{seed},{},{},{},{}\n",
                s.global_step,
                s.mean_reward,
                s.phi_rel_percent,
                if s.damaged { 1 } else { 0 }
            ));
        }
    }
    write_file(path, out.as_bytes())
}

pub fn write_scatter(path: &Path, rows: &[CalibrationRow]) -> Result<()> {
    let mut out = String::from("system_id,oracle_phi,auto_phi_rel\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.system_id, r.oracle_phi, r.auto_phi));
    }
    write_file(path, out.as_bytes())
}

pub fn write_lines(path: &Path, header: &str, lines: &[String]) -> Result<()> {
    let mut out = String::from(header);
    if !out.ends_with('\n') {
        out.push('\n');
    }
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}
