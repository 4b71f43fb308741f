//! Directional street-level imagery: references, providers and the disk cache.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::transport::{HttpRequest, Transport};
use super::ClientError;
use crate::geo::{normalize_heading, GeoPoint};
use crate::graph::NodeId;

/// Camera parameters shared by every crop in a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewParams {
    pub width_px: u32,
    pub height_px: u32,
    pub fov_deg: f64,
    pub pitch_deg: f64,
}

impl Default for ViewParams {
    fn default() -> Self {
        Self { width_px: 512, height_px: 512, fov_deg: 90.0, pitch_deg: 30.0 }
    }
}

impl ViewParams {
    pub fn validate(&self) -> Result<(), ClientError> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(ClientError::InvalidRequest("image size must be non-zero".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg <= 120.0) {
            return Err(ClientError::InvalidRequest(format!("fov {} outside (0, 120]", self.fov_deg)));
        }
        if !(-90.0..=90.0).contains(&self.pitch_deg) {
            return Err(ClientError::InvalidRequest(format!("pitch {} outside [-90, 90]", self.pitch_deg)));
        }
        Ok(())
    }
}

/// Heading rounded to a tenth of a degree, wrapped into [0, 360).
fn rounded_heading(h: f64) -> f64 {
    let r = (normalize_heading(h) * 10.0).round() / 10.0;
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub node: NodeId,
    pub location: GeoPoint,
    pub heading_deg: f64,
    pub pitch_deg: f64,
    pub fov_deg: f64,
    pub width_px: u32,
    pub height_px: u32,
    pub cache_key: String,
}

impl ImageRef {
    pub fn new(node: NodeId, location: GeoPoint, heading_deg: f64, view: &ViewParams) -> Self {
        let heading_deg = normalize_heading(heading_deg);
        let cache_key = cache_key(&node, location, heading_deg, view);
        Self {
            node,
            location,
            heading_deg,
            pitch_deg: view.pitch_deg,
            fov_deg: view.fov_deg,
            width_px: view.width_px,
            height_px: view.height_px,
            cache_key,
        }
    }

    pub fn rounded_heading(&self) -> f64 {
        rounded_heading(self.heading_deg)
    }

    fn describe(&self) -> String {
        format!("{} heading {:.1}", self.node, self.rounded_heading())
    }
}

/// Content address of a crop. Headings that agree to 0.1 degree share a key.
pub fn cache_key(node: &NodeId, location: GeoPoint, heading_deg: f64, view: &ViewParams) -> String {
    let canonical = format!(
        "pano={};lat={:.7};lon={:.7};heading={:.1};pitch={:.1};fov={:.1};size={}x{}",
        node,
        location.lat(),
        location.lon(),
        rounded_heading(heading_deg),
        view.pitch_deg,
        view.fov_deg,
        view.width_px,
        view.height_px
    );
    let digest = Sha256::digest(canonical.as_bytes());
    let mut hex = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(hex, "{b:02x}");
    }
    hex
}

pub trait ImageProvider: Send + Sync {
    fn fetch(&self, r: &ImageRef) -> Result<Vec<u8>, ClientError>;
}

impl<P: ImageProvider + ?Sized> ImageProvider for Arc<P> {
    fn fetch(&self, r: &ImageRef) -> Result<Vec<u8>, ClientError> {
        (**self).fetch(r)
    }
}

const STUB_SIDE_PX: u32 = 64;

/// Offline provider: a small deterministic JPEG whose comment segment carries
/// the node and heading.
#[derive(Debug, Default, Clone, Copy)]
pub struct StubImageProvider;

impl StubImageProvider {
    pub fn label(r: &ImageRef) -> String {
        format!("stub node={} heading={:.1}", r.node, r.rounded_heading())
    }
}

impl ImageProvider for StubImageProvider {
    fn fetch(&self, r: &ImageRef) -> Result<Vec<u8>, ClientError> {
        let seed = Sha256::digest(r.cache_key.as_bytes());
        let hue = (r.rounded_heading() / 360.0 * 255.0) as u8;
        let img = image::RgbImage::from_fn(STUB_SIDE_PX, STUB_SIDE_PX, |x, y| {
            let band = ((x / 8 + y / 8) % 2) as u8;
            image::Rgb([hue, seed[0] ^ (band * 0x40), seed[1].wrapping_add((y * 2) as u8)])
        });
        let mut jpeg = Vec::new();
        image::codecs::jpeg::JpegEncoder::new_with_quality(&mut jpeg, 80)
            .encode_image(&img)
            .map_err(|e| ClientError::Provider { context: r.describe(), status: None, message: e.to_string() })?;
        Ok(with_jpeg_comment(&jpeg, &Self::label(r)))
    }
}

/// Inserts a COM segment right after SOI.
fn with_jpeg_comment(jpeg: &[u8], text: &str) -> Vec<u8> {
    let payload = &text.as_bytes()[..text.len().min(u16::MAX as usize - 2)];
    let len = (payload.len() + 2) as u16;
    let mut out = Vec::with_capacity(jpeg.len() + payload.len() + 4);
    out.extend_from_slice(&jpeg[..2]);
    out.extend_from_slice(&[0xFF, 0xFE]);
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&jpeg[2..]);
    out
}

/// Reads back the first COM segment of a JPEG, if any.
pub fn jpeg_comment(jpeg: &[u8]) -> Option<String> {
    let mut i = 2;
    while i + 4 <= jpeg.len() && jpeg[i] == 0xFF {
        let marker = jpeg[i + 1];
        let len = u16::from_be_bytes([jpeg[i + 2], jpeg[i + 3]]) as usize;
        if marker == 0xFE {
            let body = jpeg.get(i + 4..i + 2 + len)?;
            return Some(String::from_utf8_lossy(body).into_owned());
        }
        if marker == 0xDA {
            return None;
        }
        i += 2 + len;
    }
    None
}

pub const STREET_VIEW_ENDPOINT: &str = "https://maps.googleapis.com/maps/api/streetview";

/// Street View Static API crops.
pub struct StreetViewProvider {
    transport: Arc<dyn Transport>,
    endpoint: String,
    api_key: String,
}

impl StreetViewProvider {
    pub fn new(transport: Arc<dyn Transport>, endpoint: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self { transport, endpoint: endpoint.into(), api_key: api_key.into() }
    }

    /// Reads the key from `key_var`, failing before any request is made.
    pub fn from_env(
        transport: Arc<dyn Transport>,
        endpoint: impl Into<String>,
        key_var: &str,
    ) -> Result<Self, ClientError> {
        let key = std::env::var(key_var)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| ClientError::Config(format!("environment variable {key_var} is not set")))?;
        Ok(Self::new(transport, endpoint, key))
    }

    pub fn request_for(&self, r: &ImageRef) -> HttpRequest {
        let url = format!(
            "{}?size={}x{}&pano={}&heading={}&pitch={}&fov={}&key={}",
            self.endpoint,
            r.width_px,
            r.height_px,
            percent_encode(r.node.as_str()),
            r.rounded_heading(),
            r.pitch_deg,
            r.fov_deg,
            percent_encode(&self.api_key)
        );
        HttpRequest::get(url)
    }
}

impl ImageProvider for StreetViewProvider {
    fn fetch(&self, r: &ImageRef) -> Result<Vec<u8>, ClientError> {
        let resp = self.transport.execute(&self.request_for(r)).map_err(|e| ClientError::Provider {
            context: r.describe(),
            status: None,
            message: e.to_string(),
        })?;
        if !resp.is_success() {
            let text = String::from_utf8_lossy(&resp.body);
            return Err(ClientError::Provider {
                context: r.describe(),
                status: Some(resp.status),
                message: text.chars().take(200).collect(),
            });
        }
        Ok(resp.body)
    }
}

fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-_.~".contains(&b) {
            out.push(b as char);
        } else {
            let _ = write!(out, "%{b:02X}");
        }
    }
    out
}

/// `{dir}/{cache_key}.jpg` store with atomic write-rename.
#[derive(Debug, Clone)]
pub struct ImageCache {
    dir: PathBuf,
}

impl ImageCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.jpg"))
    }

    pub fn get(&self, key: &str) -> Result<Option<Vec<u8>>, ClientError> {
        match std::fs::read(self.path_for(key)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(ClientError::Storage { path: self.path_for(key), source: e }),
        }
    }

    pub fn put(&self, key: &str, bytes: &[u8]) -> Result<(), ClientError> {
        let target = self.path_for(key);
        let storage = |source| ClientError::Storage { path: target.clone(), source };
        std::fs::create_dir_all(&self.dir).map_err(storage)?;
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(storage)?;
        tmp.write_all(bytes).map_err(storage)?;
        tmp.persist(&target).map_err(|e| storage(e.error))?;
        Ok(())
    }
}

/// Cache-first wrapper around any provider.
pub struct CachedImageProvider<P> {
    inner: P,
    cache: ImageCache,
    misses: AtomicU64,
}

impl<P: ImageProvider> CachedImageProvider<P> {
    pub fn new(inner: P, cache: ImageCache) -> Self {
        Self { inner, cache, misses: AtomicU64::new(0) }
    }

    /// Number of fetches forwarded to the inner provider.
    pub fn provider_calls(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }
}

impl<P: ImageProvider> ImageProvider for CachedImageProvider<P> {
    fn fetch(&self, r: &ImageRef) -> Result<Vec<u8>, ClientError> {
        if let Some(hit) = self.cache.get(&r.cache_key)? {
            return Ok(hit);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let bytes = self.inner.fetch(r)?;
        self.cache.put(&r.cache_key, &bytes)?;
        Ok(bytes)
    }
}
