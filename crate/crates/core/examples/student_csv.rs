//! Write the synthetic student-grades table used by `configs/student.toml`.
//!
//! ```text
//! cargo run --example student_csv -- data/student-like.csv
//! ```

use std::fs::File;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "data/student-like.csv".into());
    let table = confit::synth::student_like(649, 649)?;
    confit::synth::write_csv(&table, File::create(&path)?)?;
    eprintln!("wrote {} rows to {path}", table.rows.len());
    Ok(())
}
