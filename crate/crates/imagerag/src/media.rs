//! Turning image references into bytes or wire URLs.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use imagerag_core::ImageRef;

use crate::error::{Error, Result};

pub fn is_remote(s: &str) -> bool {
    s.starts_with("http://") || s.starts_with("https://")
}

fn local_path(s: &str) -> &str {
    s.strip_prefix("file://").unwrap_or(s)
}

pub fn media_type_for_ext(ext: &str) -> &'static str {
    match ext.to_ascii_lowercase().as_str() {
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "webp" => "image/webp",
        "gif" => "image/gif",
        "json" => "application/json",
        _ => "application/octet-stream",
    }
}

/// File extension guessed from content.
pub fn sniff_ext(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        "png"
    } else if bytes.starts_with(&[0xff, 0xd8, 0xff]) {
        "jpg"
    } else if bytes.len() >= 12 && &bytes[..4] == b"RIFF" && &bytes[8..12] == b"WEBP" {
        "webp"
    } else if bytes.first() == Some(&b'{') {
        "json"
    } else {
        "bin"
    }
}

pub fn data_uri(bytes: &[u8]) -> String {
    format!("data:{};base64,{}", media_type_for_ext(sniff_ext(bytes)), STANDARD.encode(bytes))
}

/// Bytes behind a `data:` URI or a local path. Remote URLs are not fetched.
pub fn read_image(image: &ImageRef) -> Result<Vec<u8>> {
    let s = image.as_str();
    if let Some(rest) = s.strip_prefix("data:") {
        let (_, payload) = rest
            .split_once(";base64,")
            .ok_or_else(|| Error::Precondition(format!("unsupported data URI for {}", truncate(s))))?;
        return STANDARD
            .decode(payload)
            .map_err(|e| Error::Precondition(format!("bad base64 image: {e}")));
    }
    if is_remote(s) {
        return Err(Error::Precondition(format!("remote image {s} cannot be read locally")));
    }
    let path = local_path(s);
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// A URL a remote service can consume: remote and data URIs pass through,
/// local files are inlined as base64 data URIs.
pub fn wire_url(image: &ImageRef) -> Result<String> {
    let s = image.as_str();
    if is_remote(s) || s.starts_with("data:") {
        return Ok(s.to_string());
    }
    let path = local_path(s);
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ext = Path::new(path).extension().and_then(|e| e.to_str()).unwrap_or("");
    let media = match media_type_for_ext(ext) {
        "application/octet-stream" => media_type_for_ext(sniff_ext(&bytes)),
        m => m,
    };
    Ok(format!("data:{media};base64,{}", STANDARD.encode(bytes)))
}

fn truncate(s: &str) -> &str {
    let end = s.char_indices().nth(48).map_or(s.len(), |(i, _)| i);
    &s[..end]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_uri_round_trip() {
        let bytes = b"{\"a\":1}".to_vec();
        let uri = data_uri(&bytes);
        assert!(uri.starts_with("data:application/json;base64,"));
        assert_eq!(read_image(&ImageRef::new(uri)).unwrap(), bytes);
    }

    #[test]
    fn local_files_are_inlined() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        std::fs::write(&path, b"\x89PNG\r\n\x1a\nrest").unwrap();
        let url = wire_url(&ImageRef::new(path.to_string_lossy())).unwrap();
        assert!(url.starts_with("data:image/png;base64,"));
        assert_eq!(wire_url(&ImageRef::from("https://x/y.jpg")).unwrap(), "https://x/y.jpg");
        assert!(read_image(&ImageRef::from("https://x/y.jpg")).is_err());
    }
}
