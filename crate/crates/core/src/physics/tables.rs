use std::path::Path;

use crate::Result;

/// Reads a two-column `energy_mev,value` table.
pub fn read_table_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut energies = Vec::new();
    let mut values = Vec::new();
    for record in reader.deserialize() {
        let (energy, value): (f64, f64) = record?;
        energies.push(energy);
        values.push(value);
    }
    Ok((energies, values))
}

pub fn write_table_csv(path: &Path, energies: &[f64], values: &[f64]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    writer.write_record(["energy_mev", "value"])?;
    for (e, v) in energies.iter().zip(values) {
        writer.write_record([e.to_string(), v.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}
