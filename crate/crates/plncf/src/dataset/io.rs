//! Bundle persistence: canonical JSON plus CSV exports.
//!
//! `dataset.json` is written by hand so the byte stream is canonical: fixed
//! key order, one record per line, and every real printed with 17 significant
//! digits so the round trip is bit-exact. Loading goes through serde and then
//! full structural validation, including recomputing every stored alignment
//! score.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{BundleMeta, DatasetBundle, DatasetError, GroupProfile, Interaction, SurveyVector};

/// Format a real with 17 significant digits (1 leading + 16 fractional),
/// enough to reproduce any f64 exactly on parse.
pub fn canonical_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn reals(vals: &[f64]) -> String {
    let body: Vec<String> = vals.iter().map(|&v| canonical_real(v)).collect();
    format!("[{}]", body.join(","))
}

/// Serialize `bundle` to canonical JSON at `path`.
///
/// The writer is intentionally unvalidating — it records exactly what it is
/// given. Validation belongs to generation and loading.
pub fn save_bundle(bundle: &DatasetBundle, path: &Path) -> Result<(), DatasetError> {
    let mut out = String::new();
    out.push_str("{\n\"users\": [\n");
    for (i, u) in bundle.users.iter().enumerate() {
        let sep = if i + 1 == bundle.users.len() { "" } else { "," };
        writeln!(
            out,
            "{{\"user_id\": {}, \"q33\": {}, \"q26\": {}}}{sep}",
            u.user_id,
            reals(&u.q33),
            reals(&u.q26)
        )
        .expect("string write");
    }
    out.push_str("],\n\"groups\": [\n");
    for (i, g) in bundle.groups.iter().enumerate() {
        let sep = if i + 1 == bundle.groups.len() { "" } else { "," };
        writeln!(
            out,
            "{{\"group_id\": {}, \"features\": {}, \"source_user\": {}}}{sep}",
            g.group_id,
            reals(&g.features),
            g.source_user
        )
        .expect("string write");
    }
    out.push_str("],\n\"interactions\": [\n");
    for (i, it) in bundle.interactions.iter().enumerate() {
        let sep = if i + 1 == bundle.interactions.len() { "" } else { "," };
        writeln!(
            out,
            "{{\"user_id\": {}, \"group_id\": {}, \"align\": {}}}{sep}",
            it.user_id,
            it.group_id,
            canonical_real(it.align)
        )
        .expect("string write");
    }
    let m = &bundle.meta;
    writeln!(
        out,
        "],\n\"meta\": {{\"n\": {}, \"m\": {}, \"k\": {}, \"reps\": {}, \"rng_seed\": {}, \"generator_version\": {}}}\n}}",
        m.n, m.m, m.k, m.reps, m.rng_seed, m.generator_version
    )
    .expect("string write");
    fs::write(path, out)?;
    Ok(())
}

#[derive(Deserialize)]
struct BundleOnDisk {
    users: Vec<SurveyVector>,
    groups: Vec<GroupProfile>,
    interactions: Vec<Interaction>,
    meta: BundleMeta,
}

/// Load and fully validate a bundle written by [`save_bundle`].
pub fn load_bundle(path: &Path) -> Result<DatasetBundle, DatasetError> {
    let text = fs::read_to_string(path)?;
    let on_disk: BundleOnDisk =
        serde_json::from_str(&text).map_err(|e| DatasetError::Schema(e.to_string()))?;
    let bundle = DatasetBundle {
        users: on_disk.users,
        groups: on_disk.groups,
        interactions: on_disk.interactions,
        meta: on_disk.meta,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Write `users.csv`, `groups.csv`, and `interactions.csv` into `dir`.
pub fn write_csv_exports(bundle: &DatasetBundle, dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir)?;

    let mut users = String::from("user_id");
    for i in 0..super::Q33_LEN {
        write!(users, ",q33_{i}").expect("string write");
    }
    for i in 0..super::Q26_LEN {
        write!(users, ",q26_{i}").expect("string write");
    }
    users.push('\n');
    for u in &bundle.users {
        write!(users, "{}", u.user_id).expect("string write");
        for v in u.q33.iter().chain(&u.q26) {
            write!(users, ",{}", canonical_real(*v)).expect("string write");
        }
        users.push('\n');
    }
    fs::write(dir.join("users.csv"), users)?;

    let mut groups = String::from("group_id,source_user");
    for i in 0..super::FEATURE_LEN {
        write!(groups, ",f{i}").expect("string write");
    }
    groups.push('\n');
    for g in &bundle.groups {
        write!(groups, "{},{}", g.group_id, g.source_user).expect("string write");
        for v in &g.features {
            write!(groups, ",{}", canonical_real(*v)).expect("string write");
        }
        groups.push('\n');
    }
    fs::write(dir.join("groups.csv"), groups)?;

    let mut inter = String::from("user_id,group_id,align\n");
    for it in &bundle.interactions {
        writeln!(
            inter,
            "{},{},{}",
            it.user_id,
            it.group_id,
            canonical_real(it.align)
        )
        .expect("string write");
    }
    fs::write(dir.join("interactions.csv"), inter)?;
    Ok(())
}
