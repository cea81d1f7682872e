use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One labeled clip listed in a dataset manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub style: String,
    pub content: String,
}

/// Reads a comma-separated manifest with a `path,style,content` header. Relative
/// paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, base).map_err(|e| e.context(path.display().to_string()))
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?.clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "style", "content"] {
        return Err(Error::Parse { line: 1, msg: format!("manifest header must be `path,style,content`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")) });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse { line, msg: e.to_string() }
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        let (p, style, content) = (field(0), field(1), field(2));
        if p.is_empty() || style.is_empty() || content.is_empty() {
            return Err(Error::Parse { line, msg: "empty manifest field".into() });
        }
        let p = PathBuf::from(p);
        let path = if p.is_absolute() { p } else { base.join(p) };
        out.push(ManifestEntry { path, style, content });
    }
    if out.is_empty() {
        return Err(Error::Data("manifest lists no clips".into()));
    }
    Ok(out)
}

/// Writes a manifest whose paths are relative to `base` where possible.
pub fn format_manifest(entries: &[ManifestEntry], base: &Path) -> String {
    let mut out = String::from("path,style,content\n");
    for e in entries {
        let p = e.path.strip_prefix(base).unwrap_or(&e.path);
        out.push_str(&format!("{},{},{}\n", p.display(), e.style, e.content));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let m = parse_manifest("path,style,content\na.bvh, proud ,walk\n/abs/b.bvh,old,kick\n", Path::new("/data")).unwrap();
        assert_eq!(m[0].path, PathBuf::from("/data/a.bvh"));
        assert_eq!(m[0].style, "proud");
        assert_eq!(m[1].path, PathBuf::from("/abs/b.bvh"));
        let text = format_manifest(&m, Path::new("/data"));
        assert_eq!(parse_manifest(&text, Path::new("/data")).unwrap(), m);
    }

    #[test]
    fn rejects_bad_manifests() {
        assert!(parse_manifest("file,style,content\na,b,c\n", Path::new(".")).is_err());
        assert!(parse_manifest("path,style,content\n", Path::new(".")).is_err());
        assert!(parse_manifest("path,style,content\na,,c\n", Path::new(".")).is_err());
        assert!(parse_manifest("path,style,content\na,b\n", Path::new(".")).is_err());
    }
}
