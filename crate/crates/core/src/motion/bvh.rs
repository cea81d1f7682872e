//! BVH text reader and writer.

use std::fmt::Write as _;

use nalgebra::Vector3;

use super::skeleton::{Channel, Joint, Skeleton};
use crate::error::{Error, Result};

/// Raw contents of a BVH file: hierarchy plus one channel row per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct BvhData {
    pub skeleton: Skeleton,
    pub frames: Vec<Vec<f64>>,
    pub frame_time: f64,
}

impl BvhData {
    pub fn fps(&self) -> f64 {
        1.0 / self.frame_time
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }
}

struct Tokens<'a> {
    lines: Vec<(usize, Vec<&'a str>)>,
    line: usize,
    col: usize,
}

impl<'a> Tokens<'a> {
    fn new(lines: Vec<(usize, Vec<&'a str>)>) -> Self {
        Tokens { lines, line: 0, col: 0 }
    }

    fn line_no(&self) -> usize {
        self.lines.get(self.line).map(|l| l.0).unwrap_or_else(|| self.lines.last().map_or(1, |l| l.0))
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse { line: self.line_no(), msg: msg.into() }
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.line).and_then(|l| l.1.get(self.col).copied())
    }

    fn next(&mut self) -> Result<&'a str> {
        let tok = self.peek().ok_or_else(|| self.err("unexpected end of file"))?;
        self.col += 1;
        if self.col >= self.lines[self.line].1.len() {
            self.line += 1;
            self.col = 0;
        }
        Ok(tok)
    }

    fn expect(&mut self, want: &str) -> Result<()> {
        let line = self.line_no();
        let tok = self.next()?;
        if tok != want {
            return Err(Error::Parse { line, msg: format!("expected `{want}`, found `{tok}`") });
        }
        Ok(())
    }

    fn number(&mut self) -> Result<f64> {
        let line = self.line_no();
        let tok = self.next()?;
        tok.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse { line, msg: format!("expected a number, found `{tok}`") })
    }

    fn vector(&mut self) -> Result<Vector3<f64>> {
        Ok(Vector3::new(self.number()?, self.number()?, self.number()?))
    }
}

/// Parses a BVH document.
pub fn parse_bvh(text: &str) -> Result<BvhData> {
    let lines: Vec<(usize, Vec<&str>)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
        .filter(|(_, t)| !t.is_empty())
        .collect();
    let mut tok = Tokens::new(lines);
    tok.expect("HIERARCHY")?;
    tok.expect("ROOT")?;
    let mut joints = Vec::new();
    parse_joint(&mut tok, None, &mut joints)?;
    let skeleton = Skeleton::new(joints).map_err(|e| tok.err(e.to_string()))?;

    tok.expect("MOTION")?;
    tok.expect("Frames:")?;
    let line = tok.line_no();
    let count: usize = tok
        .next()?
        .parse()
        .map_err(|_| Error::Parse { line, msg: "frame count is not a non-negative integer".into() })?;
    tok.expect("Frame")?;
    tok.expect("Time:")?;
    let line = tok.line_no();
    let frame_time = tok.number()?;
    if frame_time <= 0.0 {
        return Err(Error::Parse { line, msg: format!("frame time must be positive, got {frame_time}") });
    }
    if tok.col != 0 {
        return Err(tok.err("unexpected tokens after frame time"));
    }

    let width = skeleton.num_channels();
    let mut frames = Vec::with_capacity(count);
    for (line, values) in &tok.lines[tok.line..] {
        if values.len() != width {
            return Err(Error::Parse {
                line: *line,
                msg: format!("frame has {} values, skeleton declares {} channels", values.len(), width),
            });
        }
        let row = values
            .iter()
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Parse { line: *line, msg: "non-numeric channel value".into() })?;
        frames.push(row);
    }
    if frames.len() != count {
        return Err(Error::Parse {
            line: tok.lines.last().map_or(1, |l| l.0),
            msg: format!("header declares {count} frames, found {}", frames.len()),
        });
    }
    Ok(BvhData { skeleton, frames, frame_time })
}

fn parse_joint(tok: &mut Tokens<'_>, parent: Option<usize>, joints: &mut Vec<Joint>) -> Result<()> {
    let name = tok.next()?.to_string();
    tok.expect("{")?;
    tok.expect("OFFSET")?;
    let offset = tok.vector()?;
    let mut channels = Vec::new();
    if tok.peek() == Some("CHANNELS") {
        tok.next()?;
        let line = tok.line_no();
        let n: usize =
            tok.next()?.parse().map_err(|_| Error::Parse { line, msg: "channel count is not an integer".into() })?;
        for _ in 0..n {
            let line = tok.line_no();
            let t = tok.next()?;
            let c = Channel::parse(t).ok_or_else(|| Error::Parse { line, msg: format!("unknown channel `{t}`") })?;
            channels.push(c);
        }
    }
    let index = joints.len();
    joints.push(Joint { name, parent, offset, channels, end_site: None });
    loop {
        let line = tok.line_no();
        match tok.next()? {
            "JOINT" => parse_joint(tok, Some(index), joints)?,
            "End" => {
                tok.expect("Site")?;
                tok.expect("{")?;
                tok.expect("OFFSET")?;
                joints[index].end_site = Some(tok.vector()?);
                tok.expect("}")?;
            }
            "}" => return Ok(()),
            other => return Err(Error::Parse { line, msg: format!("unexpected `{other}` in joint block") }),
        }
    }
}

fn num(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

/// Serializes a skeleton and raw channel frames as a BVH document.
pub fn write_bvh_frames(skeleton: &Skeleton, frames: &[Vec<f64>], frame_time: f64) -> Result<String> {
    let width = skeleton.num_channels();
    if let Some(bad) = frames.iter().position(|f| f.len() != width) {
        return Err(Error::Motion(format!("frame {bad} has {} values, expected {width}", frames[bad].len())));
    }
    let mut out = String::from("HIERARCHY\n");
    write_joint(skeleton, 0, 0, &mut out);
    let _ = writeln!(out, "MOTION\nFrames: {}\nFrame Time: {}", frames.len(), frame_time);
    for f in frames {
        let row: Vec<String> = f.iter().map(|&v| num(v)).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    Ok(out)
}

fn write_joint(skel: &Skeleton, j: usize, depth: usize, out: &mut String) {
    let pad = "\t".repeat(depth);
    let joint = skel.joint(j);
    let kw = if joint.parent.is_none() { "ROOT" } else { "JOINT" };
    let o = joint.offset;
    let _ = writeln!(out, "{pad}{kw} {}\n{pad}{{", joint.name);
    let _ = writeln!(out, "{pad}\tOFFSET {} {} {}", num(o.x), num(o.y), num(o.z));
    if !joint.channels.is_empty() {
        let names: Vec<&str> = joint.channels.iter().map(|c| c.name()).collect();
        let _ = writeln!(out, "{pad}\tCHANNELS {} {}", names.len(), names.join(" "));
    }
    for c in skel.children(j) {
        write_joint(skel, c, depth + 1, out);
    }
    if let Some(e) = joint.end_site {
        let _ = writeln!(out, "{pad}\tEnd Site\n{pad}\t{{\n{pad}\t\tOFFSET {} {} {}\n{pad}\t}}", num(e.x), num(e.y), num(e.z));
    }
    let _ = writeln!(out, "{pad}}}");
}
