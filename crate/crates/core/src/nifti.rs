//! NIfTI-1 volume I/O and canonical RAS reorientation.
//!
//! Reads and writes single-file NIfTI-1 volumes (`.nii`, optionally gzip
//! compressed as `.nii.gz`), little- or big-endian, and reorients loaded
//! volumes to the RAS frame by axis permutation and flips only — no
//! resampling. NIfTI-2 and `.hdr`/`.img` pairs are rejected.

use std::fmt;
use std::io::Read;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use ndarray::{Array3, ShapeBuilder};
use thiserror::Error;

/// Byte length of the NIfTI-1 header.
pub const HEADER_SIZE: usize = 348;
/// Offset of the voxel data in files we write (header + 4-byte extension pad).
const DATA_OFFSET: usize = 352;

const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
const MAGIC_PAIR: &[u8; 4] = b"ni1\0";
const NIFTI2_HEADER_SIZE: i32 = 540;

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("file too short for a NIfTI-1 header: {len} bytes, need {HEADER_SIZE}")]
    TooShort { len: usize },
    #[error("unrecognized header size {0}; not a NIfTI-1 file")]
    BadHeaderSize(i32),
    #[error("NIfTI-2 file detected; only NIfTI-1 is supported")]
    Nifti2Unsupported,
    #[error(".hdr/.img pair format detected; only single-file NIfTI-1 is supported")]
    PairFormatUnsupported,
    #[error("bad magic bytes {0:?}; not a NIfTI-1 file")]
    BadMagic([u8; 4]),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("header declares dims {expected:?} ({n} voxels) but file holds {actual} values")]
    ShapeMismatch {
        expected: [usize; 3],
        n: usize,
        actual: usize,
    },
    #[error("volume is not 3-D: dim[0] = {0}")]
    NotThreeDimensional(i16),
    #[error("non-positive dimension in header: {0:?}")]
    BadDims([i64; 3]),
    #[error("non-finite voxel value at flat index {index}")]
    NonFiniteData { index: usize },
    #[error("affine linear part is singular")]
    SingularAffine,
    #[error("orientation is ambiguous: two voxel axes share a dominant world axis")]
    AmbiguousOrientation,
    #[error("gzip decode failed on {path}: {source}")]
    Gzip {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, NiftiError>;

/// 4x4 voxel-index-to-world-mm transform, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine(pub [[f64; 4]; 4]);

impl Affine {
    pub fn identity() -> Self {
        Self::from_diag([1.0, 1.0, 1.0])
    }

    /// Axis-aligned affine with the given voxel spacings and zero translation.
    pub fn from_diag(spacing: [f64; 3]) -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, s) in spacing.iter().enumerate() {
            m[i][i] = *s;
        }
        m[3][3] = 1.0;
        Affine(m)
    }

    /// Column `j` of the 3x3 linear part.
    pub fn linear_col(&self, j: usize) -> [f64; 3] {
        [self.0[0][j], self.0[1][j], self.0[2][j]]
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.0[0][3], self.0[1][3], self.0[2][3]]
    }

    /// Map a voxel index to world mm coordinates.
    pub fn apply(&self, idx: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.0[r][3]
                + self.0[r][0] * idx[0]
                + self.0[r][1] * idx[1]
                + self.0[r][2] * idx[2];
        }
        out
    }

    /// Determinant of the 3x3 linear part.
    pub fn det3(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
}

/// Anatomical direction of increasing voxel index along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisLabel {
    Right,
    Left,
    Anterior,
    Posterior,
    Superior,
    Inferior,
}

impl AxisLabel {
    pub fn letter(self) -> char {
        match self {
            AxisLabel::Right => 'R',
            AxisLabel::Left => 'L',
            AxisLabel::Anterior => 'A',
            AxisLabel::Posterior => 'P',
            AxisLabel::Superior => 'S',
            AxisLabel::Inferior => 'I',
        }
    }

    /// World axis index (0 = left-right, 1 = posterior-anterior, 2 = inferior-superior).
    fn world_axis(self) -> usize {
        match self {
            AxisLabel::Right | AxisLabel::Left => 0,
            AxisLabel::Anterior | AxisLabel::Posterior => 1,
            AxisLabel::Superior | AxisLabel::Inferior => 2,
        }
    }

    fn positive(self) -> bool {
        matches!(
            self,
            AxisLabel::Right | AxisLabel::Anterior | AxisLabel::Superior
        )
    }

    fn from_world(axis: usize, positive: bool) -> Self {
        match (axis, positive) {
            (0, true) => AxisLabel::Right,
            (0, false) => AxisLabel::Left,
            (1, true) => AxisLabel::Anterior,
            (1, false) => AxisLabel::Posterior,
            (2, true) => AxisLabel::Superior,
            (2, false) => AxisLabel::Inferior,
            _ => unreachable!("world axis out of range"),
        }
    }
}

/// Orientation of a volume's three voxel axes, e.g. RAS or LPS.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrientationCode(pub [AxisLabel; 3]);

impl OrientationCode {
    pub const RAS: OrientationCode = OrientationCode([
        AxisLabel::Right,
        AxisLabel::Anterior,
        AxisLabel::Superior,
    ]);

    pub fn is_ras(&self) -> bool {
        *self == Self::RAS
    }
}

impl fmt::Display for OrientationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in self.0 {
            write!(f, "{}", l.letter())?;
        }
        Ok(())
    }
}

/// Which header field supplied the affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffineSource {
    Sform,
    Qform,
    Spacing,
}

impl fmt::Display for AffineSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AffineSource::Sform => write!(f, "sform"),
            AffineSource::Qform => write!(f, "qform"),
            AffineSource::Spacing => write!(f, "spacing"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VolumeHeader {
    /// Voxels per axis.
    pub dims: [usize; 3],
    /// Millimetres per voxel along each axis.
    pub spacing: [f64; 3],
    /// On-disk NIfTI-1 datatype code.
    pub datatype_code: i16,
    /// Voxel-index-to-world transform.
    pub affine: Affine,
    /// Which header field the affine came from.
    pub affine_source: AffineSource,
}

/// A loaded 3-D scalar volume. Data is held as f64 regardless of the
/// on-disk datatype.
#[derive(Debug, Clone)]
pub struct Volume {
    pub data: Array3<f64>,
    pub header: VolumeHeader,
}

impl Volume {
    /// Build a volume from data and an affine; spacing is derived from the
    /// affine's column norms.
    pub fn new(data: Array3<f64>, affine: Affine) -> Self {
        let dims = {
            let s = data.shape();
            [s[0], s[1], s[2]]
        };
        let spacing = [0, 1, 2].map(|j| {
            let c = affine.linear_col(j);
            (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
        });
        Volume {
            data,
            header: VolumeHeader {
                dims,
                spacing,
                datatype_code: NiftiDataType::F64.code(),
                affine,
                affine_source: AffineSource::Sform,
            },
        }
    }
}

/// On-disk element types we can read and write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDataType {
    U8,
    I16,
    I32,
    F32,
    F64,
    I8,
    U16,
    U32,
}

impl NiftiDataType {
    pub fn code(self) -> i16 {
        match self {
            NiftiDataType::U8 => 2,
            NiftiDataType::I16 => 4,
            NiftiDataType::I32 => 8,
            NiftiDataType::F32 => 16,
            NiftiDataType::F64 => 64,
            NiftiDataType::I8 => 256,
            NiftiDataType::U16 => 512,
            NiftiDataType::U32 => 768,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(NiftiDataType::U8),
            4 => Ok(NiftiDataType::I16),
            8 => Ok(NiftiDataType::I32),
            16 => Ok(NiftiDataType::F32),
            64 => Ok(NiftiDataType::F64),
            256 => Ok(NiftiDataType::I8),
            512 => Ok(NiftiDataType::U16),
            768 => Ok(NiftiDataType::U32),
            other => Err(NiftiError::UnsupportedDatatype(other)),
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            NiftiDataType::U8 | NiftiDataType::I8 => 1,
            NiftiDataType::I16 | NiftiDataType::U16 => 2,
            NiftiDataType::I32 | NiftiDataType::U32 | NiftiDataType::F32 => 4,
            NiftiDataType::F64 => 8,
        }
    }
}

struct RawHeader {
    dims: [usize; 3],
    spacing: [f64; 3],
    datatype: NiftiDataType,
    vox_offset: usize,
    scl_slope: f32,
    scl_inter: f32,
    affine: Affine,
    affine_source: AffineSource,
}

fn io_err(path: &Path, source: std::io::Error) -> NiftiError {
    NiftiError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

/// Load a NIfTI-1 volume from `.nii` or `.nii.gz`.
///
/// The voxel data is promoted to f64, with `scl_slope`/`scl_inter` applied
/// when the header declares a non-trivial scaling.
pub fn load_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let raw = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let bytes = if is_gzip(&raw) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| NiftiError::Gzip {
                path: path.display().to_string(),
                source: e,
            })?;
        out
    } else {
        raw
    };
    load_nifti_bytes(&bytes)
}

/// Decode an in-memory, already-decompressed NIfTI-1 byte stream.
pub fn load_nifti_bytes(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::TooShort { len: bytes.len() });
    }
    let sizeof_le = LittleEndian::read_i32(&bytes[0..4]);
    let sizeof_be = BigEndian::read_i32(&bytes[0..4]);
    let hdr = if sizeof_le == HEADER_SIZE as i32 {
        parse_header::<LittleEndian>(bytes)?
    } else if sizeof_be == HEADER_SIZE as i32 {
        parse_header::<BigEndian>(bytes)?
    } else if sizeof_le == NIFTI2_HEADER_SIZE || sizeof_be == NIFTI2_HEADER_SIZE {
        return Err(NiftiError::Nifti2Unsupported);
    } else {
        return Err(NiftiError::BadHeaderSize(sizeof_le));
    };

    let n: usize = hdr.dims.iter().product();
    let start = hdr.vox_offset;
    let need = n * hdr.datatype.size_bytes();
    let avail = bytes.len().saturating_sub(start);
    if avail < need {
        return Err(NiftiError::ShapeMismatch {
            expected: hdr.dims,
            n,
            actual: avail / hdr.datatype.size_bytes(),
        });
    }
    let payload = &bytes[start..start + need];
    let values = if sizeof_le == HEADER_SIZE as i32 {
        decode_values::<LittleEndian>(payload, hdr.datatype, n)
    } else {
        decode_values::<BigEndian>(payload, hdr.datatype, n)
    };

    let apply_scl = hdr.scl_slope != 0.0 && !(hdr.scl_slope == 1.0 && hdr.scl_inter == 0.0);
    let values: Vec<f64> = if apply_scl {
        values
            .into_iter()
            .map(|v| v * hdr.scl_slope as f64 + hdr.scl_inter as f64)
            .collect()
    } else {
        values
    };
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(NiftiError::NonFiniteData { index });
    }

    // NIfTI voxel data is column-major: the first index varies fastest.
    let (nx, ny, nz) = (hdr.dims[0], hdr.dims[1], hdr.dims[2]);
    let data = Array3::from_shape_vec((nx, ny, nz).f(), values)
        .expect("length checked against dims");
    Ok(Volume {
        data,
        header: VolumeHeader {
            dims: hdr.dims,
            spacing: hdr.spacing,
            datatype_code: hdr.datatype.code(),
            affine: hdr.affine,
            affine_source: hdr.affine_source,
        },
    })
}

fn parse_header<E: ByteOrder>(b: &[u8]) -> Result<RawHeader> {
    let magic: [u8; 4] = b[344..348].try_into().unwrap();
    if &magic == MAGIC_PAIR {
        return Err(NiftiError::PairFormatUnsupported);
    }
    if &magic != MAGIC_SINGLE {
        return Err(NiftiError::BadMagic(magic));
    }

    let ndim = E::read_i16(&b[40..42]);
    if !(1..=7).contains(&ndim) {
        return Err(NiftiError::NotThreeDimensional(ndim));
    }
    let mut dim = [1i64; 7];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = E::read_i16(&b[42 + 2 * i..44 + 2 * i]) as i64;
    }
    // Accept trailing singleton dimensions but nothing truly 4-D.
    if ndim < 3 || dim[..3].iter().any(|&d| d < 1) {
        return Err(NiftiError::BadDims([dim[0], dim[1], dim[2]]));
    }
    if dim[3..ndim as usize].iter().any(|&d| d > 1) {
        return Err(NiftiError::NotThreeDimensional(ndim));
    }
    let dims = [dim[0] as usize, dim[1] as usize, dim[2] as usize];

    let datatype = NiftiDataType::from_code(E::read_i16(&b[70..72]))?;

    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = E::read_f32(&b[76 + 4 * i..80 + 4 * i]);
    }
    let spacing = [
        pixdim[1].abs().max(f32::MIN_POSITIVE) as f64,
        pixdim[2].abs().max(f32::MIN_POSITIVE) as f64,
        pixdim[3].abs().max(f32::MIN_POSITIVE) as f64,
    ];

    let vox_offset = E::read_f32(&b[108..112]).max(HEADER_SIZE as f32) as usize;
    let scl_slope = E::read_f32(&b[112..116]);
    let scl_inter = E::read_f32(&b[116..120]);

    let qform_code = E::read_i16(&b[252..254]);
    let sform_code = E::read_i16(&b[254..256]);

    // Affine precedence: sform, then qform, then spacing-scaled identity.
    let (affine, affine_source) = if sform_code > 0 {
        let mut m = [[0.0f64; 4]; 4];
        for (r, off) in [(0usize, 280usize), (1, 296), (2, 312)] {
            for c in 0..4 {
                m[r][c] = E::read_f32(&b[off + 4 * c..off + 4 * c + 4]) as f64;
            }
        }
        m[3][3] = 1.0;
        (Affine(m), AffineSource::Sform)
    } else if qform_code > 0 {
        let bq = E::read_f32(&b[256..260]) as f64;
        let cq = E::read_f32(&b[260..264]) as f64;
        let dq = E::read_f32(&b[264..268]) as f64;
        let ox = E::read_f32(&b[268..272]) as f64;
        let oy = E::read_f32(&b[272..276]) as f64;
        let oz = E::read_f32(&b[276..280]) as f64;
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        (
            qform_affine(bq, cq, dq, [ox, oy, oz], spacing, qfac),
            AffineSource::Qform,
        )
    } else {
        (Affine::from_diag(spacing), AffineSource::Spacing)
    };

    Ok(RawHeader {
        dims,
        spacing,
        datatype,
        vox_offset,
        scl_slope,
        scl_inter,
        affine,
        affine_source,
    })
}

/// Standard quaternion-to-rotation construction from the NIfTI-1 reference.
fn qform_affine(b: f64, c: f64, d: f64, offset: [f64; 3], spacing: [f64; 3], qfac: f64) -> Affine {
    let a = (1.0 - b * b - c * c - d * d).max(0.0).sqrt();
    let r = [
        [
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
        ],
        [
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            2.0 * (c * d - a * b),
        ],
        [
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            a * a + d * d - b * b - c * c,
        ],
    ];
    let mut m = [[0.0; 4]; 4];
    for row in 0..3 {
        m[row][0] = r[row][0] * spacing[0];
        m[row][1] = r[row][1] * spacing[1];
        m[row][2] = r[row][2] * spacing[2] * qfac;
        m[row][3] = offset[row];
    }
    m[3][3] = 1.0;
    Affine(m)
}

fn decode_values<E: ByteOrder>(payload: &[u8], dt: NiftiDataType, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    match dt {
        NiftiDataType::U8 => out.extend(payload.iter().map(|&v| v as f64)),
        NiftiDataType::I8 => out.extend(payload.iter().map(|&v| v as i8 as f64)),
        NiftiDataType::I16 => {
            out.extend(payload.chunks_exact(2).map(|c| E::read_i16(c) as f64));
        }
        NiftiDataType::U16 => {
            out.extend(payload.chunks_exact(2).map(|c| E::read_u16(c) as f64));
        }
        NiftiDataType::I32 => {
            out.extend(payload.chunks_exact(4).map(|c| E::read_i32(c) as f64));
        }
        NiftiDataType::U32 => {
            out.extend(payload.chunks_exact(4).map(|c| E::read_u32(c) as f64));
        }
        NiftiDataType::F32 => {
            out.extend(payload.chunks_exact(4).map(|c| E::read_f32(c) as f64));
        }
        NiftiDataType::F64 => {
            out.extend(payload.chunks_exact(8).map(|c| E::read_f64(c)));
        }
    }
    out
}

/// Write a volume as single-file NIfTI-1 (little-endian), gzip compressed
/// when the path ends in `.gz`. The affine is stored as the sform.
pub fn write_nifti(volume: &Volume, path: impl AsRef<Path>, datatype: NiftiDataType) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_nifti::<LittleEndian>(volume, datatype);
    let compressed = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("gz"))
        .unwrap_or(false);
    if compressed {
        let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
        let mut enc = flate2::write::GzEncoder::new(file, flate2::Compression::fast());
        std::io::Write::write_all(&mut enc, &bytes).map_err(|e| io_err(path, e))?;
        enc.finish().map_err(|e| io_err(path, e))?;
    } else {
        std::fs::write(path, &bytes).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

fn encode_nifti<E: ByteOrder>(volume: &Volume, datatype: NiftiDataType) -> Vec<u8> {
    let h = &volume.header;
    let n: usize = h.dims.iter().product();
    let mut out = vec![0u8; DATA_OFFSET + n * datatype.size_bytes()];

    E::write_i32(&mut out[0..4], HEADER_SIZE as i32);
    let dim: [i16; 8] = [
        3,
        h.dims[0] as i16,
        h.dims[1] as i16,
        h.dims[2] as i16,
        1,
        1,
        1,
        1,
    ];
    for (i, d) in dim.iter().enumerate() {
        E::write_i16(&mut out[40 + 2 * i..42 + 2 * i], *d);
    }
    E::write_i16(&mut out[70..72], datatype.code());
    E::write_i16(&mut out[72..74], (datatype.size_bytes() * 8) as i16);
    let pixdim: [f32; 8] = [
        1.0,
        h.spacing[0] as f32,
        h.spacing[1] as f32,
        h.spacing[2] as f32,
        1.0,
        1.0,
        1.0,
        1.0,
    ];
    for (i, p) in pixdim.iter().enumerate() {
        E::write_f32(&mut out[76 + 4 * i..80 + 4 * i], *p);
    }
    E::write_f32(&mut out[108..112], DATA_OFFSET as f32);
    E::write_f32(&mut out[112..116], 1.0); // scl_slope
    E::write_f32(&mut out[116..120], 0.0); // scl_inter
    E::write_i16(&mut out[254..256], 1); // sform_code
    for (r, off) in [(0usize, 280usize), (1, 296), (2, 312)] {
        for c in 0..4 {
            E::write_f32(
                &mut out[off + 4 * c..off + 4 * c + 4],
                volume.header.affine.0[r][c] as f32,
            );
        }
    }
    out[344..348].copy_from_slice(MAGIC_SINGLE);

    let mut pos = DATA_OFFSET;
    // Column-major on disk: first index fastest.
    for k in 0..h.dims[2] {
        for j in 0..h.dims[1] {
            for i in 0..h.dims[0] {
                let v = volume.data[(i, j, k)];
                match datatype {
                    NiftiDataType::U8 => out[pos] = v as u8,
                    NiftiDataType::I8 => out[pos] = v as i8 as u8,
                    NiftiDataType::I16 => E::write_i16(&mut out[pos..pos + 2], v as i16),
                    NiftiDataType::U16 => E::write_u16(&mut out[pos..pos + 2], v as u16),
                    NiftiDataType::I32 => E::write_i32(&mut out[pos..pos + 4], v as i32),
                    NiftiDataType::U32 => E::write_u32(&mut out[pos..pos + 4], v as u32),
                    NiftiDataType::F32 => E::write_f32(&mut out[pos..pos + 4], v as f32),
                    NiftiDataType::F64 => E::write_f64(&mut out[pos..pos + 8], v),
                }
                pos += datatype.size_bytes();
            }
        }
    }
    out
}

/// Decode the anatomical direction of each voxel axis by nearest world axis.
///
/// For each column of the linear part, the dominant world axis (largest
/// absolute component) and its sign give that voxel axis's label.
pub fn orientation_of(affine: &Affine) -> Result<OrientationCode> {
    let det = affine.det3();
    if !det.is_finite() || det.abs() < 1e-12 {
        return Err(NiftiError::SingularAffine);
    }
    let mut labels = [AxisLabel::Right; 3];
    let mut taken = [false; 3];
    for j in 0..3 {
        let col = affine.linear_col(j);
        let mut best = 0;
        for i in 1..3 {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if taken[best] {
            return Err(NiftiError::AmbiguousOrientation);
        }
        taken[best] = true;
        labels[j] = AxisLabel::from_world(best, col[best] > 0.0);
    }
    Ok(OrientationCode(labels))
}

/// Reorient a volume to RAS by axis permutation and flips only.
///
/// The returned volume holds the same voxel multiset, and every voxel keeps
/// its world coordinate under the updated affine. Already-RAS volumes are
/// returned unchanged.
pub fn reorient_to_ras(volume: &Volume) -> Result<Volume> {
    let code = orientation_of(&volume.header.affine)?;
    if code.is_ras() {
        return Ok(volume.clone());
    }

    // For each world axis, find the voxel axis that maps to it and the sign.
    let mut src_axis = [0usize; 3];
    let mut positive = [true; 3];
    for (voxel_axis, label) in code.0.iter().enumerate() {
        src_axis[label.world_axis()] = voxel_axis;
        positive[label.world_axis()] = label.positive();
    }

    let old_dims = volume.header.dims;
    let new_dims = [0, 1, 2].map(|w| old_dims[src_axis[w]]);
    let new_spacing = [0, 1, 2].map(|w| volume.header.spacing[src_axis[w]]);

    let mut data = Array3::<f64>::zeros(new_dims);
    for n0 in 0..new_dims[0] {
        for n1 in 0..new_dims[1] {
            for n2 in 0..new_dims[2] {
                let n = [n0, n1, n2];
                let mut o = [0usize; 3];
                for w in 0..3 {
                    let v = src_axis[w];
                    o[v] = if positive[w] {
                        n[w]
                    } else {
                        old_dims[v] - 1 - n[w]
                    };
                }
                data[(n0, n1, n2)] = volume.data[(o[0], o[1], o[2])];
            }
        }
    }

    let mut m = [[0.0f64; 4]; 4];
    m[3][3] = 1.0;
    let t = volume.header.affine.translation();
    let mut new_t = t;
    for w in 0..3 {
        let col = volume.header.affine.linear_col(src_axis[w]);
        let sign = if positive[w] { 1.0 } else { -1.0 };
        for r in 0..3 {
            m[r][w] = sign * col[r];
        }
        if !positive[w] {
            let extent = (old_dims[src_axis[w]] - 1) as f64;
            for r in 0..3 {
                new_t[r] += col[r] * extent;
            }
        }
    }
    for r in 0..3 {
        m[r][3] = new_t[r];
    }
    let affine = Affine(m);
    debug_assert!(orientation_of(&affine).map(|c| c.is_ras()).unwrap_or(false));

    Ok(Volume {
        data,
        header: VolumeHeader {
            dims: new_dims,
            spacing: new_spacing,
            datatype_code: volume.header.datatype_code,
            affine,
            affine_source: volume.header.affine_source,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_volume(dims: [usize; 3], affine: Affine, seed: u64) -> Volume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array3::from_shape_fn(dims, |_| {
            // f32-representable values so f32 round-trips are exact
            rng.gen_range(-1000.0f32..1000.0) as f64
        });
        Volume::new(data, affine)
    }

    #[test]
    fn orientation_identity_is_ras() {
        let code = orientation_of(&Affine::identity()).unwrap();
        assert!(code.is_ras());
        assert_eq!(code.to_string(), "RAS");
    }

    #[test]
    fn orientation_lps_from_flipped_affine() {
        let mut m = Affine::identity();
        m.0[0][0] = -1.0;
        m.0[1][1] = -1.0;
        let code = orientation_of(&m).unwrap();
        assert_eq!(code.to_string(), "LPS");
    }

    #[test]
    fn orientation_permuted_columns() {
        // Decoded by hand: col0 = e_y -> A, col1 = e_z -> S, col2 = e_x -> R.
        let m = Affine([
            [0.0, 0.0, 1.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]);
        let code = orientation_of(&m).unwrap();
        assert_eq!(code.to_string(), "ASR");
    }

    #[test]
    fn orientation_singular_rejected() {
        let mut m = Affine::identity();
        m.0[0][0] = 0.0;
        assert!(matches!(
            orientation_of(&m),
            Err(NiftiError::SingularAffine)
        ));
    }

    #[test]
    fn reorient_ras_is_fixed_point() {
        let v = random_volume([4, 5, 6], Affine::from_diag([1.0, 1.0, 1.0]), 7);
        let r = reorient_to_ras(&v).unwrap();
        assert_eq!(r.data, v.data);
        assert_eq!(r.header.affine, v.header.affine);
    }

    #[test]
    fn reorient_lps_preserves_world_coordinates() {
        let mut m = Affine::from_diag([-1.0, -1.0, 1.0]);
        m.0[0][3] = 12.5;
        m.0[1][3] = -3.0;
        let v = random_volume([5, 5, 5], m, 11);
        let r = reorient_to_ras(&v).unwrap();
        assert!(orientation_of(&r.header.affine).unwrap().is_ras());

        // Compare the full (world coordinate, value) sets.
        let mut before: Vec<([i64; 3], f64)> = Vec::new();
        let mut after: Vec<([i64; 3], f64)> = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                for k in 0..5 {
                    let w = v.header.affine.apply([i as f64, j as f64, k as f64]);
                    let wq = w.map(|x| (x * 1e9).round() as i64);
                    before.push((wq, v.data[(i, j, k)]));
                    let w2 = r.header.affine.apply([i as f64, j as f64, k as f64]);
                    let wq2 = w2.map(|x| (x * 1e9).round() as i64);
                    after.push((wq2, r.data[(i, j, k)]));
                }
            }
        }
        before.sort_by(|a, b| a.partial_cmp(b).unwrap());
        after.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(before, after);
    }

    #[test]
    fn reorient_idempotent_on_random_flips() {
        for seed in 0..8u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // random permutation + signs
            let mut axes = [0usize, 1, 2];
            for i in (1..3).rev() {
                let j = rng.gen_range(0..=i);
                axes.swap(i, j);
            }
            let mut m = [[0.0f64; 4]; 4];
            m[3][3] = 1.0;
            for (j, &a) in axes.iter().enumerate() {
                m[a][j] = if rng.gen_bool(0.5) { 1.5 } else { -1.5 };
            }
            let v = random_volume([3, 4, 5], Affine(m), seed + 100);
            let once = reorient_to_ras(&v).unwrap();
            let twice = reorient_to_ras(&once).unwrap();
            assert_eq!(once.data, twice.data);
            assert_eq!(once.header.affine, twice.header.affine);
            // voxel multiset is conserved
            let mut a: Vec<u64> = v.data.iter().map(|x| x.to_bits()).collect();
            let mut b: Vec<u64> = once.data.iter().map(|x| x.to_bits()).collect();
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn roundtrip_f64_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vol.nii");
        let v = random_volume([8, 8, 8], Affine::from_diag([1.0, 2.5, 0.5]), 3);
        write_nifti(&v, &path, NiftiDataType::F64).unwrap();
        let r = load_nifti(&path).unwrap();
        assert_eq!(r.header.dims, v.header.dims);
        assert_eq!(r.data, v.data);
        assert_eq!(r.header.affine_source, AffineSource::Sform);
    }

    #[test]
    fn roundtrip_gzip_equals_plain() {
        let dir = tempfile::tempdir().unwrap();
        let v = random_volume([6, 7, 8], Affine::identity(), 5);
        let plain = dir.path().join("vol.nii");
        let gz = dir.path().join("vol.nii.gz");
        write_nifti(&v, &plain, NiftiDataType::F32).unwrap();
        write_nifti(&v, &gz, NiftiDataType::F32).unwrap();
        let a = load_nifti(&plain).unwrap();
        let b = load_nifti(&gz).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.header.dims, b.header.dims);
    }

    #[test]
    fn roundtrip_big_endian() {
        let mut vi = random_volume([3, 4, 2], Affine::identity(), 9);
        vi.data.mapv_inplace(|x| x.trunc());
        let bytes = encode_nifti::<BigEndian>(&vi, NiftiDataType::I16);
        let r = load_nifti_bytes(&bytes).unwrap();
        assert_eq!(r.data, vi.data.mapv(|x| x as i16 as f64));
    }

    #[test]
    fn integer_datatypes_roundtrip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for dt in [
            NiftiDataType::U8,
            NiftiDataType::I8,
            NiftiDataType::I16,
            NiftiDataType::U16,
            NiftiDataType::I32,
            NiftiDataType::U32,
        ] {
            let data = Array3::from_shape_fn([4, 4, 4], |_| rng.gen_range(0..100) as f64);
            let v = Volume::new(data, Affine::identity());
            let path = dir.path().join("int.nii");
            write_nifti(&v, &path, dt).unwrap();
            let r = load_nifti(&path).unwrap();
            assert_eq!(r.data, v.data, "datatype {dt:?}");
            assert_eq!(r.header.datatype_code, dt.code());
        }
    }

    #[test]
    fn missing_file_reports_io_error() {
        let err = load_nifti("/nonexistent/path/vol.nii").unwrap_err();
        assert!(matches!(err, NiftiError::Io { .. }));
    }

    #[test]
    fn bad_magic_rejected() {
        let v = random_volume([2, 2, 2], Affine::identity(), 1);
        let mut bytes = encode_nifti::<LittleEndian>(&v, NiftiDataType::F32);
        bytes[344..348].copy_from_slice(b"xxxx");
        assert!(matches!(
            load_nifti_bytes(&bytes),
            Err(NiftiError::BadMagic(_))
        ));
    }

    #[test]
    fn pair_format_rejected() {
        let v = random_volume([2, 2, 2], Affine::identity(), 1);
        let mut bytes = encode_nifti::<LittleEndian>(&v, NiftiDataType::F32);
        bytes[344..348].copy_from_slice(MAGIC_PAIR);
        assert!(matches!(
            load_nifti_bytes(&bytes),
            Err(NiftiError::PairFormatUnsupported)
        ));
    }

    #[test]
    fn nifti2_rejected() {
        let v = random_volume([2, 2, 2], Affine::identity(), 1);
        let mut bytes = encode_nifti::<LittleEndian>(&v, NiftiDataType::F32);
        LittleEndian::write_i32(&mut bytes[0..4], NIFTI2_HEADER_SIZE);
        assert!(matches!(
            load_nifti_bytes(&bytes),
            Err(NiftiError::Nifti2Unsupported)
        ));
    }

    #[test]
    fn unsupported_datatype_rejected() {
        let v = random_volume([2, 2, 2], Affine::identity(), 1);
        let mut bytes = encode_nifti::<LittleEndian>(&v, NiftiDataType::F32);
        LittleEndian::write_i16(&mut bytes[70..72], 32); // complex64, unsupported
        assert!(matches!(
            load_nifti_bytes(&bytes),
            Err(NiftiError::UnsupportedDatatype(32))
        ));
    }

    #[test]
    fn truncated_payload_rejected() {
        let v = random_volume([4, 4, 4], Affine::identity(), 1);
        let bytes = encode_nifti::<LittleEndian>(&v, NiftiDataType::F32);
        let cut = &bytes[..bytes.len() - 10];
        assert!(matches!(
            load_nifti_bytes(cut),
            Err(NiftiError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_data_rejected() {
        let mut data = Array3::zeros([2, 2, 2]);
        data[(1, 0, 1)] = f64::NAN;
        let v = Volume::new(data, Affine::identity());
        let bytes = encode_nifti::<LittleEndian>(&v, NiftiDataType::F64);
        assert!(matches!(
            load_nifti_bytes(&bytes),
            Err(NiftiError::NonFiniteData { .. })
        ));
    }

    #[test]
    fn too_short_rejected() {
        assert!(matches!(
            load_nifti_bytes(&[0u8; 100]),
            Err(NiftiError::TooShort { len: 100 })
        ));
    }

    #[test]
    fn scl_slope_applied() {
        let v = random_volume([2, 2, 2], Affine::identity(), 1);
        let mut vi = v.clone();
        vi.data.mapv_inplace(|x| x.trunc());
        let mut bytes = encode_nifti::<LittleEndian>(&vi, NiftiDataType::I16);
        LittleEndian::write_f32(&mut bytes[112..116], 2.0);
        LittleEndian::write_f32(&mut bytes[116..120], 10.0);
        let r = load_nifti_bytes(&bytes).unwrap();
        let expect = vi.data.mapv(|x| (x as i16 as f64) * 2.0 + 10.0);
        assert_eq!(r.data, expect);
    }

    #[test]
    fn qform_fallback_used_when_no_sform() {
        let v = random_volume([2, 3, 4], Affine::identity(), 1);
        let mut bytes = encode_nifti::<LittleEndian>(&v, NiftiDataType::F32);
        // clear sform, set qform with identity rotation and an offset
        LittleEndian::write_i16(&mut bytes[254..256], 0);
        LittleEndian::write_i16(&mut bytes[252..254], 1);
        LittleEndian::write_f32(&mut bytes[268..272], 5.0);
        let r = load_nifti_bytes(&bytes).unwrap();
        assert_eq!(r.header.affine_source, AffineSource::Qform);
        assert!((r.header.affine.0[0][3] - 5.0).abs() < 1e-9);
        assert!((r.header.affine.0[0][0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn spacing_fallback_when_no_form() {
        let mut v = random_volume([2, 3, 4], Affine::from_diag([2.0, 2.0, 2.0]), 1);
        v.header.spacing = [2.0, 2.0, 2.0];
        let mut bytes = encode_nifti::<LittleEndian>(&v, NiftiDataType::F32);
        LittleEndian::write_i16(&mut bytes[254..256], 0);
        let r = load_nifti_bytes(&bytes).unwrap();
        assert_eq!(r.header.affine_source, AffineSource::Spacing);
        assert!((r.header.affine.0[1][1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn brats_shaped_volume_dims() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("brats.nii.gz");
        let data = Array3::zeros([240, 240, 155]);
        let v = Volume::new(data, Affine::identity());
        write_nifti(&v, &path, NiftiDataType::U8).unwrap();
        let r = load_nifti(&path).unwrap();
        assert_eq!(r.header.dims, [240, 240, 155]);
    }
}
