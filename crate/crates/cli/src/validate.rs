//! `opinet validate`: schema check of record files.

use std::path::{Path, PathBuf};

use clap::Args;

use opinet_core::dataset::{read_record_with, AliasTable};

use crate::config::Resolver;
use crate::{CliError, ReadArgs};

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub read: ReadArgs,
    /// Record files or directories (searched recursively for *.json).
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
}

fn collect(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(CliError::config(format!("{}: no such file or directory", path.display())));
    }
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::failure(format!("{}: {e}", path.display())))?;
        if entry.file_type().is_file() && entry.path().extension().is_some_and(|e| e == "json") {
            out.push(entry.into_path());
        }
    }
    Ok(out)
}

fn check(path: &Path, aliases: &AliasTable) -> Result<(), String> {
    read_record_with(path, aliases).map(|_| ()).map_err(|e| {
        let msg = e.to_string();
        match e.field() {
            Some(f) if !msg.contains(f) => format!("field `{f}`: {msg}"),
            _ => msg,
        }
    })
}

pub fn run(args: ValidateArgs, r: &mut Resolver) -> Result<(), CliError> {
    let aliases = args.read.aliases(r)?;
    r.reject_unknown()?;
    let mut files = Vec::new();
    for p in &args.paths {
        files.extend(collect(p)?);
    }
    let mut failed = 0;
    for f in &files {
        match check(f, &aliases) {
            Ok(()) => println!("PASS {}", f.display()),
            Err(e) => {
                failed += 1;
                println!("FAIL {}: {e}", f.display());
            }
        }
    }
    println!("{} files: {} passed, {} failed", files.len(), files.len() - failed, failed);
    if failed > 0 {
        return Err(CliError::failure(format!("{failed} of {} records failed validation", files.len())));
    }
    Ok(())
}
