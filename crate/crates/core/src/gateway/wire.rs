//! JSON wire messages for remote backends. Images and masks travel as
//! base64-encoded PNG. Keys are emitted in sorted order.
//!
//! | route          | request                    | response             |
//! |----------------|----------------------------|----------------------|
//! | `/v1/inpaint`  | `{image, mask?, prompt}`   | `{image}`            |
//! | `/v1/edit`     | `{image, prompt}`          | `{image}`            |
//! | `/v1/fusion`   | `{image, mask?, prompt}`   | `{image}`            |
//! | `/v1/global`   | `{image, prompt}`          | `{image}`            |
//! | `/v1/segment`  | `{image, prompt}`          | `{mask}`             |
//! | `/v1/segment`  | `{image, prompt: ""}`      | `{boxes}`            |
//! | `/v1/chat`     | `{image?, prompt}`         | `{text}`             |
//!
//! Failures answer with a non-2xx status and `{code, error}`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::image::{ImageBuffer, ImageError, RasterMask};
use crate::layout::Layout;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageResponse {
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskResponse {
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxesResponse {
    pub boxes: Layout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub code: String,
    pub error: String,
}

pub mod codes {
    pub const BAD_REQUEST: &str = "bad_request";
    pub const NOT_FOUND: &str = "not_found";
    pub const ROI_NOT_FOUND: &str = "roi_not_found";
    pub const MOCK_MISS: &str = "mock_miss";
    pub const BACKEND: &str = "backend_error";
}

pub fn encode<T: Serialize>(msg: &T) -> String {
    serde_json::to_string(msg).expect("wire messages always serialize")
}

pub fn decode<T: DeserializeOwned>(body: &str) -> Result<T, String> {
    serde_json::from_str(body).map_err(|e| e.to_string())
}

pub fn image_to_b64(img: &ImageBuffer) -> Result<String, ImageError> {
    Ok(STANDARD.encode(img.to_png()?))
}

pub fn mask_to_b64(m: &RasterMask) -> Result<String, ImageError> {
    Ok(STANDARD.encode(m.to_png()?))
}

fn b64_bytes(s: &str) -> Result<Vec<u8>, ImageError> {
    STANDARD
        .decode(s.trim())
        .map_err(|e| ImageError::Decode(format!("base64: {e}")))
}

pub fn image_from_b64(s: &str) -> Result<ImageBuffer, ImageError> {
    ImageBuffer::from_png(&b64_bytes(s)?)
}

pub fn mask_from_b64(s: &str) -> Result<RasterMask, ImageError> {
    RasterMask::from_png(&b64_bytes(s)?)
}
