//! MSDS container, little-endian:
//!
//! ```text
//! "MSDS" | version u32 | m u32 | n_basis u32 | count u64
//! per record: m² f64 κ (row-major) | n_basis × m² f64 label columns | CRC32 u32 of the record payload
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::{DatasetError, DatasetRecord};

pub const MAGIC: [u8; 4] = *b"MSDS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub m: usize,
    pub n_basis: usize,
}

impl DatasetHeader {
    fn check(&self, m: usize, n_basis: usize) -> Result<(), DatasetError> {
        if self.m != m || self.n_basis != n_basis {
            return Err(DatasetError::HeaderMismatch { m: self.m, n_basis: self.n_basis, file_m: m, file_n_basis: n_basis });
        }
        Ok(())
    }
}

fn record_payload(record: &DatasetRecord) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(8 * record.kappa.len() * (1 + record.n_basis()));
    for v in &record.kappa {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    // nalgebra storage is column-major, which is exactly the column-after-column layout
    for v in record.label.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

/// Writes a header and all records; every record must match the header.
pub fn write_dataset_to<W: Write>(mut out: W, header: DatasetHeader, records: &[DatasetRecord]) -> Result<(), DatasetError> {
    for r in records {
        header.check(r.m, r.n_basis())?;
        if r.kappa.len() != r.m * r.m || r.label.nrows() != r.m * r.m {
            return Err(DatasetError::TileLength { expected: r.m * r.m, got: r.kappa.len() });
        }
    }
    out.write_all(&MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(header.m as u32).to_le_bytes())?;
    out.write_all(&(header.n_basis as u32).to_le_bytes())?;
    out.write_all(&(records.len() as u64).to_le_bytes())?;
    for r in records {
        let payload = record_payload(r);
        out.write_all(&payload)?;
        out.write_all(&crc32fast::hash(&payload).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_dataset(path: impl AsRef<Path>, header: DatasetHeader, records: &[DatasetRecord]) -> Result<(), DatasetError> {
    write_dataset_to(BufWriter::new(File::create(path)?), header, records)
}

fn read_exact_or<R: Read>(input: &mut R, buf: &mut [u8], what: impl FnOnce() -> String) -> Result<(), DatasetError> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => DatasetError::Truncated { what: what() },
        _ => DatasetError::Io(e),
    })
}

fn read_u32<R: Read>(input: &mut R, what: &str) -> Result<u32, DatasetError> {
    let mut b = [0u8; 4];
    read_exact_or(input, &mut b, || what.to_string())?;
    Ok(u32::from_le_bytes(b))
}

/// Reads a dataset, verifying checksums and label invariants. With
/// `expected` set, a file whose `(m, n_basis)` differ is rejected.
pub fn read_dataset_from<R: Read>(
    mut input: R,
    expected: Option<DatasetHeader>,
) -> Result<(DatasetHeader, Vec<DatasetRecord>), DatasetError> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut input, &mut magic, || "magic".into())?;
    if magic != MAGIC {
        return Err(DatasetError::BadMagic(magic));
    }
    let version = read_u32(&mut input, "version")?;
    if version != FORMAT_VERSION {
        return Err(DatasetError::UnsupportedVersion(version));
    }
    let m = read_u32(&mut input, "header")? as usize;
    let n_basis = read_u32(&mut input, "header")? as usize;
    let mut count = [0u8; 8];
    read_exact_or(&mut input, &mut count, || "header".into())?;
    let count = u64::from_le_bytes(count);
    let header = DatasetHeader { m, n_basis };
    if let Some(want) = expected {
        want.check(m, n_basis)?;
    }

    let cells = m * m;
    let mut payload = vec![0u8; 8 * cells * (1 + n_basis)];
    let mut records = Vec::new();
    for index in 0..count as usize {
        read_exact_or(&mut input, &mut payload, || format!("record {index}"))?;
        let stored = read_u32(&mut input, &format!("checksum of record {index}"))?;
        let computed = crc32fast::hash(&payload);
        if stored != computed {
            return Err(DatasetError::Checksum { record: index, stored, computed });
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight bytes")))
            .collect();
        let record = DatasetRecord {
            m,
            kappa: values[..cells].to_vec(),
            label: DMatrix::from_column_slice(cells, n_basis, &values[cells..]),
        };
        record.validate(index)?;
        records.push(record);
    }
    Ok((header, records))
}

pub fn read_dataset(
    path: impl AsRef<Path>,
    expected: Option<DatasetHeader>,
) -> Result<(DatasetHeader, Vec<DatasetRecord>), DatasetError> {
    read_dataset_from(BufReader::new(File::open(path)?), expected)
}
