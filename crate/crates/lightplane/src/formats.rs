//! On-disk formats: LPG1 grids, LPM1 decoder parameters, LPI1 float images,
//! PPM renders, and camera JSON. All binary payloads are little-endian FP32.
//!
//! Writers go through [`write_atomic`]: the payload lands in a temp file in
//! the target directory and is renamed into place, so failures never leave
//! a partial output behind.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use lightplane_core::hash3d::{HashStructure, StructureKind, TriPlane, VoxelGrid};
use lightplane_core::mlp::{HiddenActivation, Layer, MlpParams, OutputActivation};
use lightplane_core::rays::Camera;

use crate::error::{Error, Result};

const GRID_MAGIC: &[u8; 4] = b"LPG1";
const MLP_MAGIC: &[u8; 4] = b"LPM1";
const IMAGE_MAGIC: &[u8; 4] = b"LPI1";

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::parse(format!("{} is truncated", self.what)));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != want {
            return Err(Error::parse(format!(
                "{}: bad magic {:?}, expected {:?}",
                self.what,
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(want)
            )));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let bytes = self.take(count * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Serializes a structure: magic, u32 tag (0 voxel / 1 triplane), dims
/// `H, W, D, K`, then the raw payload(s); triplanes store xy, yz, zx.
pub fn encode_grid(structure: &HashStructure<f32>) -> Vec<u8> {
    let spec = structure.spec();
    let [h, w, d] = spec.dims;
    let mut out = Vec::new();
    out.extend_from_slice(GRID_MAGIC);
    put_u32(
        &mut out,
        match spec.kind {
            StructureKind::Voxel => 0,
            StructureKind::TriPlane => 1,
        },
    );
    for dim in [h, w, d, spec.channels] {
        put_u32(&mut out, dim as u32);
    }
    match structure {
        HashStructure::Voxel(g) => put_f32s(&mut out, &g.data),
        HashStructure::TriPlane(t) => {
            put_f32s(&mut out, &t.plane_xy);
            put_f32s(&mut out, &t.plane_yz);
            put_f32s(&mut out, &t.plane_zx);
        }
    }
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<HashStructure<f32>> {
    let mut r = Reader::new(bytes, "grid file");
    r.magic(GRID_MAGIC)?;
    let tag = r.u32()?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let d = r.u32()? as usize;
    let k = r.u32()? as usize;
    if h == 0 || w == 0 || d == 0 || k == 0 {
        return Err(Error::parse("grid file: zero dimension"));
    }
    let structure = match tag {
        0 => HashStructure::Voxel(VoxelGrid {
            dims: [h, w, d],
            channels: k,
            data: r.f32s(h * w * d * k)?,
        }),
        1 => HashStructure::TriPlane(TriPlane {
            dims: [h, w, d],
            channels: k,
            plane_xy: r.f32s(h * w * k)?,
            plane_yz: r.f32s(w * d * k)?,
            plane_zx: r.f32s(d * h * k)?,
        }),
        other => return Err(Error::parse(format!("grid file: unknown tag {other}"))),
    };
    if !r.at_end() {
        return Err(Error::parse("grid file: trailing bytes"));
    }
    Ok(structure)
}

fn encode_mlp_into(out: &mut Vec<u8>, params: &MlpParams<f32>) {
    out.extend_from_slice(MLP_MAGIC);
    put_u32(out, params.layers.len() as u32);
    for layer in &params.layers {
        put_u32(out, layer.out_dim as u32);
        put_u32(out, layer.in_dim as u32);
        put_f32s(out, &layer.weight);
        put_f32s(out, &layer.bias);
    }
    out.push(params.hidden_activation.code());
    out.push(params.output_activation.code());
}

/// One LPM1 record: magic, u32 layer count, per layer `(out, in, weight
/// row-major, bias)`, then the two activation codes as u8.
pub fn encode_mlp(params: &MlpParams<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    encode_mlp_into(&mut out, params);
    out
}

/// A parameter file holds one or more concatenated LPM1 records (the
/// renderer's decoder bundle stores opacity then feature).
pub fn encode_mlp_bundle(params: &[&MlpParams<f32>]) -> Vec<u8> {
    let mut out = Vec::new();
    for p in params {
        encode_mlp_into(&mut out, p);
    }
    out
}

fn decode_mlp_record(r: &mut Reader<'_>) -> Result<MlpParams<f32>> {
    r.magic(MLP_MAGIC)?;
    let n_layers = r.u32()? as usize;
    if n_layers == 0 || n_layers > 64 {
        return Err(Error::parse("mlp file: implausible layer count"));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let out_dim = r.u32()? as usize;
        let in_dim = r.u32()? as usize;
        if out_dim == 0 || in_dim == 0 {
            return Err(Error::parse("mlp file: zero layer dimension"));
        }
        let weight = r.f32s(out_dim * in_dim)?;
        let bias = r.f32s(out_dim)?;
        layers.push(Layer {
            out_dim,
            in_dim,
            weight,
            bias,
        });
    }
    let hidden_activation =
        HiddenActivation::from_code(r.u8()?).map_err(|e| Error::parse(e.to_string()))?;
    let output_activation =
        OutputActivation::from_code(r.u8()?).map_err(|e| Error::parse(e.to_string()))?;
    let params = MlpParams {
        layers,
        hidden_activation,
        output_activation,
    };
    params.validate()?;
    Ok(params)
}

/// Reads every record in the file.
pub fn decode_mlp_bundle(bytes: &[u8]) -> Result<Vec<MlpParams<f32>>> {
    let mut r = Reader::new(bytes, "mlp file");
    let mut records = Vec::new();
    while !r.at_end() {
        records.push(decode_mlp_record(&mut r)?);
    }
    if records.is_empty() {
        return Err(Error::parse("mlp file: empty"));
    }
    Ok(records)
}

/// Planar float image: `channels` planes of `height x width` FP32.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Channel-planar storage, each plane row-major.
    pub planes: Vec<f32>,
}

impl FeatureImage {
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Builds from pixel-major (interleaved) data as produced by the
    /// renderer: `data[pixel * channels + c]`.
    pub fn from_interleaved(width: usize, height: usize, channels: usize, data: &[f32]) -> Self {
        assert_eq!(data.len(), width * height * channels);
        let n = width * height;
        let mut planes = vec![0.0f32; data.len()];
        for p in 0..n {
            for c in 0..channels {
                planes[c * n + p] = data[p * channels + c];
            }
        }
        FeatureImage {
            width,
            height,
            channels,
            planes,
        }
    }

    pub fn to_interleaved(&self) -> Vec<f32> {
        let n = self.pixel_count();
        let mut data = vec![0.0f32; self.planes.len()];
        for p in 0..n {
            for c in 0..self.channels {
                data[p * self.channels + c] = self.planes[c * n + p];
            }
        }
        data
    }
}

pub fn encode_image(image: &FeatureImage) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(IMAGE_MAGIC);
    put_u32(&mut out, image.width as u32);
    put_u32(&mut out, image.height as u32);
    put_u32(&mut out, image.channels as u32);
    put_f32s(&mut out, &image.planes);
    out
}

pub fn decode_image(bytes: &[u8]) -> Result<FeatureImage> {
    let mut r = Reader::new(bytes, "image file");
    r.magic(IMAGE_MAGIC)?;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let channels = r.u32()? as usize;
    if width == 0 || height == 0 || channels == 0 {
        return Err(Error::parse("image file: zero dimension"));
    }
    let planes = r.f32s(width * height * channels)?;
    if !r.at_end() {
        return Err(Error::parse("image file: trailing bytes"));
    }
    Ok(FeatureImage {
        width,
        height,
        channels,
        planes,
    })
}

/// Binary PPM (P6) from interleaved RGB in `[0, 1]`.
pub fn encode_ppm(width: usize, height: usize, rgb: &[f32]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(rgb.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let header_err = || Error::parse("ppm file: bad header");
    let mut fields = Vec::new();
    let mut pos = 0;
    // P6, width, height, maxval, separated by whitespace.
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(header_err());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| header_err())?);
    }
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(header_err());
    }
    let width: usize = fields[1].parse().map_err(|_| header_err())?;
    let height: usize = fields[2].parse().map_err(|_| header_err())?;
    pos += 1; // single whitespace after maxval
    let payload = bytes
        .get(pos..pos + width * height * 3)
        .ok_or_else(|| Error::parse("ppm file: truncated payload"))?;
    Ok((width, height, payload.to_vec()))
}

/// Camera description consumed by the CLI; rotation is row-major
/// world-from-camera, `t` the camera center in world coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraFile {
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    pub width: usize,
    pub height: usize,
    #[serde(rename = "R")]
    pub rotation: [f32; 9],
    pub t: [f32; 3],
    pub near: f32,
    pub far: f32,
}

impl CameraFile {
    pub fn camera(&self) -> Camera<f32> {
        let r = &self.rotation;
        Camera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            rotation: [
                [r[0], r[1], r[2]],
                [r[3], r[4], r[5]],
                [r[6], r[7], r[8]],
            ],
            translation: self.t,
        }
    }

    pub fn from_camera(camera: &Camera<f32>, near: f32, far: f32) -> Self {
        let r = &camera.rotation;
        CameraFile {
            fx: camera.fx,
            fy: camera.fy,
            cx: camera.cx,
            cy: camera.cy,
            width: camera.width,
            height: camera.height,
            rotation: [
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ],
            t: camera.translation,
            near,
            far,
        }
    }
}

pub fn read_camera_file(path: &Path) -> Result<CameraFile> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes through a temp file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::parse("output path has no file name"))?;
    let tmp_name = format!(
        ".{}.tmp{}",
        file_name.to_string_lossy(),
        std::process::id()
    );
    let tmp = match dir {
        Some(d) => d.join(&tmp_name),
        None => std::path::PathBuf::from(&tmp_name),
    };
    let result = (|| -> Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lightplane_core::hash3d::StructureSpec;
    use lightplane_core::math::Rng;

    #[test]
    fn grid_roundtrip_both_kinds() {
        let mut rng = Rng::new(1);
        for spec in [
            StructureSpec::voxel([3, 4, 5], 2),
            StructureSpec::triplane([4, 3, 2], 3),
        ] {
            let mut g = spec.zeros::<f32>();
            g.fill_uniform(&mut rng, -2.0, 2.0);
            let bytes = encode_grid(&g);
            let back = decode_grid(&bytes).unwrap();
            assert_eq!(g, back);
        }
    }

    #[test]
    fn grid_golden_header_bytes() {
        let mut g = StructureSpec::voxel([1, 1, 1], 1).zeros::<f32>();
        g.flat_set(0, 1.0);
        let bytes = encode_grid(&g);
        let mut want = b"LPG1".to_vec();
        for v in [0u32, 1, 1, 1, 1] {
            want.extend_from_slice(&v.to_le_bytes());
        }
        want.extend_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn grid_rejects_bad_magic_and_truncation() {
        let g = StructureSpec::voxel([2, 2, 2], 1).zeros::<f32>();
        let mut bytes = encode_grid(&g);
        assert!(decode_grid(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode_grid(&bytes).is_err());
    }

    #[test]
    fn mlp_bundle_roundtrip() {
        let mut rng = Rng::new(2);
        let a = MlpParams::seeded(
            &[4, 8, 1],
            HiddenActivation::Relu,
            OutputActivation::Softplus,
            &mut rng,
        )
        .unwrap();
        let b = MlpParams::seeded(
            &[7, 8, 3],
            HiddenActivation::Softplus,
            OutputActivation::Sigmoid,
            &mut rng,
        )
        .unwrap();
        let bytes = encode_mlp_bundle(&[&a, &b]);
        let back = decode_mlp_bundle(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], a);
        assert_eq!(back[1], b);
    }

    #[test]
    fn image_roundtrip_and_interleave() {
        let data: Vec<f32> = (0..24).map(|i| i as f32 * 0.1).collect();
        let img = FeatureImage::from_interleaved(4, 2, 3, &data);
        assert_eq!(img.to_interleaved(), data);
        let back = decode_image(&encode_image(&img)).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn ppm_roundtrip() {
        let rgb = vec![0.0f32, 0.5, 1.0, 1.0, 0.25, 0.0];
        let bytes = encode_ppm(2, 1, &rgb);
        let (w, h, payload) = decode_ppm(&bytes).unwrap();
        assert_eq!((w, h), (2, 1));
        assert_eq!(payload, vec![0, 128, 255, 255, 64, 0]);
    }

    #[test]
    fn camera_file_roundtrip() {
        let json = r#"{"fx":50.0,"fy":60.0,"cx":16.0,"cy":12.0,"width":32,"height":24,
            "R":[1,0,0,0,1,0,0,0,1],"t":[0.5,-0.25,2.0],"near":0.1,"far":3.5}"#;
        let cam_file: CameraFile = serde_json::from_str(json).unwrap();
        let cam = cam_file.camera();
        cam.validate().unwrap();
        assert_eq!(cam.width, 32);
        let back = CameraFile::from_camera(&cam, cam_file.near, cam_file.far);
        assert_eq!(back.rotation, cam_file.rotation);
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = std::env::temp_dir().join(format!("lightplane-fmt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let target = dir.join("out.bin");
        write_atomic(&target, b"first").unwrap();
        write_atomic(&target, b"second").unwrap();
        assert_eq!(std::fs::read(&target).unwrap(), b"second");
        let leftovers: Vec<_> = std::fs::read_dir(&dir)
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().contains("tmp"))
            .collect();
        assert!(leftovers.is_empty());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
