//! Plain-text scene format.
//!
//! ```text
//! GRID <width> <height> <cell_size_m>
//! <height rows of width glyphs: '#' wall, '.' free, a-z instance>
//! INST <glyph> <instance_id> <class_id> <display_name>
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{Cell, GridScene, SceneError};

pub fn parse_scene_file(text: &str) -> Result<GridScene, SceneError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (hline, header) = lines
        .next()
        .ok_or(SceneError::MalformedHeader { line: 1, msg: "empty input".into() })?;
    check_tabs(hline, header)?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let bad = |msg: &str| SceneError::MalformedHeader { line: hline, msg: msg.into() };
    if parts.len() != 4 || parts[0] != "GRID" {
        return Err(bad("expected `GRID <width> <height> <cell_size_m>`"));
    }
    let width: usize = parts[1].parse().map_err(|_| bad("width is not an integer"))?;
    let height: usize = parts[2].parse().map_err(|_| bad("height is not an integer"))?;
    let cell_size: f64 = parts[3].parse().map_err(|_| bad("cell size is not a number"))?;
    if width == 0 || height == 0 {
        return Err(bad("width and height must be positive"));
    }
    let mut scene = GridScene::empty(width, height, cell_size)?;

    let mut glyph_cells: BTreeMap<char, (usize, Vec<Cell>)> = BTreeMap::new();
    let mut rows = 0;
    while rows < height {
        let Some((ln, row)) = lines.next() else {
            return Err(SceneError::MissingRows { expected: height, found: rows });
        };
        check_tabs(ln, row)?;
        let glyphs: Vec<char> = row.chars().collect();
        if glyphs.len() != width {
            return Err(SceneError::RaggedRow { line: ln, expected: width, found: glyphs.len() });
        }
        for (x, &g) in glyphs.iter().enumerate() {
            let c = Cell::new(x as i32, rows as i32);
            match g {
                '.' => {}
                '#' => scene.set_wall(c),
                'a'..='z' => glyph_cells.entry(g).or_insert_with(|| (ln, Vec::new())).1.push(c),
                _ => return Err(SceneError::UnknownGlyph { line: ln, glyph: g }),
            }
        }
        rows += 1;
    }

    let mut bound: BTreeMap<char, usize> = BTreeMap::new();
    for (ln, line) in lines {
        check_tabs(ln, line)?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = |msg: &str| SceneError::MalformedInstance { line: ln, msg: msg.into() };
        if f.len() != 5 || f[0] != "INST" {
            return Err(bad("expected `INST <glyph> <instance_id> <class_id> <display_name>`"));
        }
        let mut gc = f[1].chars();
        let glyph = match (gc.next(), gc.next()) {
            (Some(g @ 'a'..='z'), None) => g,
            _ => return Err(bad("glyph must be a single letter a-z")),
        };
        let id: u32 = f[2].parse().map_err(|_| bad("instance id is not an integer"))?;
        let class: u16 = f[3].parse().map_err(|_| bad("class id is not an integer"))?;
        if bound.insert(glyph, ln).is_some() {
            return Err(bad("glyph bound twice"));
        }
        if scene.instances().contains_key(&id) {
            return Err(bad("instance id bound twice"));
        }
        let Some((_, cells)) = glyph_cells.get(&glyph) else {
            return Err(SceneError::InstanceNotInGrid { line: ln, glyph });
        };
        scene
            .add_instance(id, class, f[4], cells)
            .map_err(|e| bad(&e.to_string()))?;
    }
    if let Some((&glyph, &(ln, _))) = glyph_cells.iter().find(|(g, _)| !bound.contains_key(g)) {
        return Err(SceneError::UnboundGlyph { line: ln, glyph });
    }
    Ok(scene)
}

fn check_tabs(line: usize, text: &str) -> Result<(), SceneError> {
    if text.contains('\t') {
        Err(SceneError::Tab { line })
    } else {
        Ok(())
    }
}

/// Writes a scene in the text format. Glyphs are assigned to instances in
/// ascending id order.
pub fn serialize_scene(scene: &GridScene) -> Result<String, SceneError> {
    let n = scene.instances().len();
    if n > 26 {
        return Err(SceneError::TooManyInstances(n));
    }
    let glyph_of: BTreeMap<u32, char> = scene
        .instances()
        .keys()
        .enumerate()
        .map(|(i, &id)| (id, (b'a' + i as u8) as char))
        .collect();
    let mut out = String::new();
    let _ = writeln!(out, "GRID {} {} {}", scene.width(), scene.height(), scene.cell_size());
    for y in 0..scene.height() as i32 {
        for x in 0..scene.width() as i32 {
            let c = Cell::new(x, y);
            let inst = scene.instance_at(c);
            out.push(if inst != 0 {
                glyph_of[&inst]
            } else if scene.is_free(c) {
                '.'
            } else {
                '#'
            });
        }
        out.push('\n');
    }
    for (id, inst) in scene.instances() {
        let _ = writeln!(out, "INST {} {} {} {}", glyph_of[id], id, inst.class_id, inst.display_name);
    }
    Ok(out)
}
