//! Embedding tables on disk: magic "KGPE", u32 version, u8 kind, u32 rows,
//! u32 cols, grid dims for patch tables, then little-endian f32 data. Row
//! ids live in a sibling `<path>.ids` text file, one id per line.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::DataError;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"KGPE";
const VERSION: u32 = 1;
/// Guard against absurd dimension fields in corrupt files.
const MAX_DIM: u32 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingKind {
    /// Per-image patch grids; `rows = n_images * grid_r * grid_c`.
    PatchGrid,
    /// One CLS vector per image.
    ImageCls,
    /// One vector per attribute.
    Text,
}

impl EmbeddingKind {
    fn to_u8(self) -> u8 {
        match self {
            EmbeddingKind::PatchGrid => 0,
            EmbeddingKind::ImageCls => 1,
            EmbeddingKind::Text => 2,
        }
    }

    fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(EmbeddingKind::PatchGrid),
            1 => Some(EmbeddingKind::ImageCls),
            2 => Some(EmbeddingKind::Text),
            _ => None,
        }
    }
}

/// Rows of d-dimensional vectors keyed by string ids.
///
/// For `PatchGrid` tables the ids name images and each image owns
/// `grid_r * grid_c` consecutive rows in grid row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub ids: Vec<String>,
    pub kind: EmbeddingKind,
    pub grid: Option<(usize, usize)>,
    rows: Tensor,
}

impl EmbeddingTable {
    pub fn new(
        ids: Vec<String>,
        kind: EmbeddingKind,
        grid: Option<(usize, usize)>,
        rows: Tensor,
    ) -> Result<Self, DataError> {
        let expected_rows = match (kind, grid) {
            (EmbeddingKind::PatchGrid, Some((r, c))) => ids.len() * r * c,
            (EmbeddingKind::PatchGrid, None) => {
                return Err(DataError::Invalid(
                    "patch_grid table requires grid dims".into(),
                ))
            }
            (_, Some(_)) => {
                return Err(DataError::Invalid(
                    "grid dims only apply to patch_grid tables".into(),
                ))
            }
            (_, None) => ids.len(),
        };
        if rows.rows() != expected_rows {
            return Err(DataError::Invalid(format!(
                "{} ids imply {expected_rows} rows, tensor has {}",
                ids.len(),
                rows.rows()
            )));
        }
        Ok(EmbeddingTable {
            ids,
            kind,
            grid,
            rows,
        })
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.rows()
    }

    pub fn data(&self) -> &Tensor {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.rows.row_slice(i)
    }

    /// Patch block of one image as an `(grid_r * grid_c) x d` tensor.
    pub fn image_patches(&self, image_index: usize) -> Result<Tensor, DataError> {
        let (gr, gc) = self.grid.ok_or_else(|| {
            DataError::Invalid("image_patches on a non-patch table".into())
        })?;
        let per = gr * gc;
        let d = self.dim();
        let lo = image_index * per;
        let mut data = Vec::with_capacity(per * d);
        for r in lo..lo + per {
            data.extend_from_slice(self.rows.row_slice(r));
        }
        Ok(Tensor::new(per, d, data).expect("block dims consistent"))
    }

    /// Row vector for the given id.
    pub fn lookup(&self, id: &str) -> Option<&[f64]> {
        debug_assert!(self.kind != EmbeddingKind::PatchGrid);
        self.ids.iter().position(|x| x == id).map(|i| self.row(i))
    }
}

fn ids_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".ids");
    os.into()
}

pub fn save_embeddings(table: &EmbeddingTable, path: &Path) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| DataError::io(path, e))?);
    let io = |e| DataError::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(VERSION).map_err(io)?;
    w.write_u8(table.kind.to_u8()).map_err(io)?;
    w.write_u32::<LittleEndian>(table.n_rows() as u32).map_err(io)?;
    w.write_u32::<LittleEndian>(table.dim() as u32).map_err(io)?;
    if let Some((gr, gc)) = table.grid {
        w.write_u32::<LittleEndian>(gr as u32).map_err(io)?;
        w.write_u32::<LittleEndian>(gc as u32).map_err(io)?;
    }
    for v in table.data().data() {
        w.write_f32::<LittleEndian>(*v as f32).map_err(io)?;
    }
    w.flush().map_err(io)?;

    let ids_file = ids_path(path);
    let mut text = String::new();
    for id in &table.ids {
        text.push_str(id);
        text.push('\n');
    }
    std::fs::write(&ids_file, text).map_err(|e| DataError::io(&ids_file, e))
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable, DataError> {
    let mut r = BufReader::new(File::open(path).map_err(|e| DataError::io(path, e))?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| DataError::format(path, 0, "file shorter than magic"))?;
    if &magic != MAGIC {
        return Err(DataError::format(path, 0, "bad magic"));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| DataError::format(path, 4, "missing version"))?;
    if version != VERSION {
        return Err(DataError::format(path, 4, format!("unsupported version {version}")));
    }
    let kind_byte = r
        .read_u8()
        .map_err(|_| DataError::format(path, 8, "missing kind"))?;
    let kind = EmbeddingKind::from_u8(kind_byte)
        .ok_or_else(|| DataError::format(path, 8, format!("unknown kind {kind_byte}")))?;
    let rows = r
        .read_u32::<LittleEndian>()
        .map_err(|_| DataError::format(path, 9, "missing row count"))?;
    let cols = r
        .read_u32::<LittleEndian>()
        .map_err(|_| DataError::format(path, 13, "missing column count"))?;
    if rows > MAX_DIM || cols > MAX_DIM {
        return Err(DataError::format(path, 9, format!("dim overflow {rows}x{cols}")));
    }
    let mut offset = 17u64;
    let grid = if kind == EmbeddingKind::PatchGrid {
        let gr = r
            .read_u32::<LittleEndian>()
            .map_err(|_| DataError::format(path, 17, "missing grid rows"))?;
        let gc = r
            .read_u32::<LittleEndian>()
            .map_err(|_| DataError::format(path, 21, "missing grid cols"))?;
        if gr > MAX_DIM || gc > MAX_DIM || gr == 0 || gc == 0 {
            return Err(DataError::format(path, 17, format!("bad grid {gr}x{gc}")));
        }
        offset += 8;
        Some((gr as usize, gc as usize))
    } else {
        None
    };
    let n = rows as usize * cols as usize;
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        match r.read_f32::<LittleEndian>() {
            Ok(v) => data.push(v as f64),
            Err(_) => {
                return Err(DataError::format(
                    path,
                    offset + 4 * i as u64,
                    "truncated payload",
                ))
            }
        }
    }
    let tensor = Tensor::new(rows as usize, cols as usize, data)
        .map_err(|e| DataError::Invalid(e.to_string()))?;

    let ids_file = ids_path(path);
    let ids_text =
        std::fs::read_to_string(&ids_file).map_err(|e| DataError::io(&ids_file, e))?;
    let ids: Vec<String> = ids_text.lines().map(str::to_string).collect();
    EmbeddingTable::new(ids, kind, grid, tensor)
}
