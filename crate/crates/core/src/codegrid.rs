//! Grids of discrete codebook indices and their binary file format:
//! magic `MSZG`, then height, width and K as u32 LE, then the indices as
//! u16 LE in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MSZG";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeGrid {
    height: usize,
    width: usize,
    num_codes: usize,
    indices: Vec<u16>,
}

impl CodeGrid {
    pub fn new(height: usize, width: usize, num_codes: usize, indices: Vec<u16>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("code grid dims must be positive, got {height}x{width}")));
        }
        if num_codes == 0 || num_codes > u16::MAX as usize + 1 {
            return Err(Error::invalid(format!("code count {num_codes} outside 1..=65536")));
        }
        if indices.len() != height * width {
            return Err(Error::shape("code grid cells", height * width, indices.len()));
        }
        if let Some((i, &v)) = indices.iter().enumerate().find(|(_, &v)| v as usize >= num_codes) {
            return Err(Error::invalid(format!(
                "code index {v} at cell {i} is not below K={num_codes}"
            )));
        }
        Ok(CodeGrid {
            height,
            width,
            num_codes,
            indices,
        })
    }

    pub fn filled(height: usize, width: usize, num_codes: usize, index: u16) -> Result<Self> {
        CodeGrid::new(height, width, num_codes, vec![index; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_codes(&self) -> usize {
        self.num_codes
    }

    pub fn indices(&self) -> &[u16] {
        &self.indices
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.indices[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, index: u16) -> Result<()> {
        if index as usize >= self.num_codes {
            return Err(Error::invalid(format!(
                "code index {index} is not below K={}",
                self.num_codes
            )));
        }
        self.indices[row * self.width + col] = index;
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 2 * self.indices.len());
        out.extend_from_slice(MAGIC);
        for v in [self.height, self.width, self.num_codes] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &i in &self.indices {
            out.extend_from_slice(&i.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut input = bytes;
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(|_| "truncated header".to_string())?;
        if &magic != MAGIC {
            return Err(format!("bad magic {magic:?}"));
        }
        let mut word = [0u8; 4];
        let mut dims = [0usize; 3];
        for d in &mut dims {
            input.read_exact(&mut word).map_err(|_| "truncated header".to_string())?;
            *d = u32::from_le_bytes(word) as usize;
        }
        let [height, width, num_codes] = dims;
        let cells = height
            .checked_mul(width)
            .ok_or_else(|| "grid dims overflow".to_string())?;
        if input.len() != cells * 2 {
            return Err(format!("expected {} index bytes, found {}", cells * 2, input.len()));
        }
        let indices = input
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        CodeGrid::new(height, width, num_codes, indices).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: path.to_path_buf(),
                what: "code grid not found".into(),
            });
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        CodeGrid::decode(&bytes).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_index_at_k() {
        assert!(CodeGrid::new(1, 2, 10, vec![0, 10]).is_err());
        assert!(CodeGrid::new(1, 2, 10, vec![0, 9]).is_ok());
    }

    #[test]
    fn header_layout() {
        let bytes = CodeGrid::new(2, 3, 10, vec![0, 1, 2, 3, 4, 9]).unwrap().encode();
        assert_eq!(&bytes[..4], b"MSZG");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &10u32.to_le_bytes());
        assert_eq!(&bytes[26..28], &9u16.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 12);
    }

    #[test]
    fn decode_rejects_truncation_and_out_of_range() {
        let mut bytes = CodeGrid::filled(2, 2, 4, 3).unwrap().encode();
        assert!(CodeGrid::decode(&bytes[..bytes.len() - 1]).is_err());
        bytes[16] = 4;
        assert!(CodeGrid::decode(&bytes).is_err());
    }

    #[test]
    fn load_missing_is_missing_artifact() {
        let err = CodeGrid::load(Path::new("/nonexistent/grid.mszg")).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact { .. }));
    }

    proptest! {
        #[test]
        fn round_trip(h in 1usize..6, w in 1usize..6, k in 1usize..300, seed in any::<u64>()) {
            let indices = (0..h * w)
                .map(|i| ((seed.wrapping_mul(i as u64 + 1) >> 7) % k as u64) as u16)
                .collect();
            let grid = CodeGrid::new(h, w, k, indices).unwrap();
            prop_assert_eq!(CodeGrid::decode(&grid.encode()).unwrap(), grid);
        }
    }
}
