//! Grid maze world: cells, legal moves, the BFS shortest path and the
//! training reward scheme.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of the reproduction maze.
pub const MAZE_SIDE: usize = 7;

/// Number of cells on the shipped maze's optimal path.
pub const DEFAULT_PATH_LEN: usize = 27;

const DEFAULT_LAYOUT: &str = "\
.#...#.
.#.#.#.
S#.#.#E
.#.#.#.
.#.#.#.
.#.#.#.
...#...
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Position {
    pub row: usize,
    pub col: usize,
}

impl Position {
    pub const fn new(row: usize, col: usize) -> Self {
        Position { row, col }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Free,
    Wall,
}

/// The four moves, in tie-breaking order. Indices match the Q-network outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoveOutcome {
    Valid,
    Blocked,
    Win,
}

/// Rectangular maze with one start and one exit cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MazeGrid {
    rows: usize,
    cols: usize,
    cells: Vec<Cell>,
    start: Position,
    exit: Position,
}

impl MazeGrid {
    /// Builds a grid and checks that start and exit are distinct free cells
    /// and that the exit is reachable.
    pub fn new(rows: usize, cols: usize, cells: Vec<Cell>, start: Position, exit: Position) -> Result<Self> {
        if rows == 0 || cols == 0 || cells.len() != rows * cols {
            return Err(Error::Maze(format!(
                "expected {rows}x{cols} = {} cells, got {}",
                rows * cols,
                cells.len()
            )));
        }
        let grid = MazeGrid {
            rows,
            cols,
            cells,
            start,
            exit,
        };
        if start == exit {
            return Err(Error::Maze("start and exit must differ".into()));
        }
        for p in [start, exit] {
            if !grid.is_free(p) {
                return Err(Error::NotFree(p));
            }
        }
        if grid.distance_from_start(exit).is_none() {
            return Err(Error::Unreachable);
        }
        Ok(grid)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn start(&self) -> Position {
        self.start
    }

    pub fn exit(&self) -> Position {
        self.exit
    }

    pub fn in_bounds(&self, p: Position) -> bool {
        p.row < self.rows && p.col < self.cols
    }

    pub fn cell(&self, p: Position) -> Option<Cell> {
        self.in_bounds(p).then(|| self.cells[p.row * self.cols + p.col])
    }

    pub fn is_free(&self, p: Position) -> bool {
        self.cell(p) == Some(Cell::Free)
    }

    /// Row-major cell index.
    pub fn index_of(&self, p: Position) -> usize {
        p.row * self.cols + p.col
    }

    pub fn positions(&self) -> impl Iterator<Item = Position> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| Position::new(r, c)))
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Position> + '_ {
        self.positions().filter(|&p| self.is_free(p))
    }

    pub fn wall_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == Cell::Wall).count()
    }

    /// The cell reached by `a`, if it is inside the grid (wall or not).
    pub fn neighbor(&self, p: Position, a: Action) -> Option<Position> {
        let (dr, dc) = a.delta();
        let r = p.row.checked_add_signed(dr)?;
        let c = p.col.checked_add_signed(dc)?;
        let q = Position::new(r, c);
        self.in_bounds(q).then_some(q)
    }

    /// Actions whose target cell is in bounds and free.
    pub fn valid_moves(&self, pos: Position) -> Result<Vec<Action>> {
        if !self.is_free(pos) {
            return Err(Error::NotFree(pos));
        }
        Ok(Action::ALL
            .into_iter()
            .filter(|&a| self.neighbor(pos, a).is_some_and(|q| self.is_free(q)))
            .collect())
    }

    /// Moves are total: a blocked move leaves the agent where it is.
    pub fn apply_move(&self, pos: Position, a: Action) -> (Position, MoveOutcome) {
        match self.neighbor(pos, a) {
            Some(q) if self.is_free(q) => {
                let outcome = if q == self.exit { MoveOutcome::Win } else { MoveOutcome::Valid };
                (q, outcome)
            }
            _ => (pos, MoveOutcome::Blocked),
        }
    }

    /// BFS distances (in moves) from `from` to every cell; `None` for
    /// walls and unreachable cells.
    pub fn bfs_distances(&self, from: Position) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.cells.len()];
        if !self.is_free(from) {
            return dist;
        }
        let mut queue = VecDeque::from([from]);
        dist[self.index_of(from)] = Some(0);
        while let Some(p) = queue.pop_front() {
            let d = dist[self.index_of(p)].unwrap_or_default();
            for a in Action::ALL {
                if let Some(q) = self.neighbor(p, a) {
                    let qi = self.index_of(q);
                    if self.is_free(q) && dist[qi].is_none() {
                        dist[qi] = Some(d + 1);
                        queue.push_back(q);
                    }
                }
            }
        }
        dist
    }

    fn distance_from_start(&self, p: Position) -> Option<usize> {
        self.bfs_distances(self.start)[self.index_of(p)]
    }

    /// Minimum number of moves from every cell to the exit.
    pub fn distances_to_exit(&self) -> Vec<Option<usize>> {
        self.bfs_distances(self.exit)
    }

    /// Minimum-length start→exit path. At every cell the first action in
    /// `Up < Down < Left < Right` order that stays on a shortest route is
    /// taken.
    pub fn shortest_path(&self) -> Result<OptimalPath> {
        let to_exit = self.distances_to_exit();
        let mut p = self.start;
        let mut d = to_exit[self.index_of(p)].ok_or(Error::Unreachable)?;
        let mut positions = vec![p];
        while d > 0 {
            let next = Action::ALL
                .into_iter()
                .filter_map(|a| self.neighbor(p, a))
                .find(|&q| to_exit[self.index_of(q)] == Some(d - 1))
                .ok_or(Error::Unreachable)?;
            positions.push(next);
            p = next;
            d -= 1;
        }
        Ok(OptimalPath { positions })
    }

    /// Number of distinct shortest start→exit paths (saturating).
    pub fn shortest_path_count(&self) -> u64 {
        let from_start = self.bfs_distances(self.start);
        let Some(total) = from_start[self.index_of(self.exit)] else {
            return 0;
        };
        let mut by_layer: Vec<Vec<Position>> = vec![Vec::new(); total + 1];
        for p in self.free_cells() {
            if let Some(d) = from_start[self.index_of(p)] {
                if d <= total {
                    by_layer[d].push(p);
                }
            }
        }
        let mut ways = vec![0u64; self.cells.len()];
        ways[self.index_of(self.start)] = 1;
        for layer in by_layer.iter().skip(1) {
            for &p in layer {
                let d = from_start[self.index_of(p)];
                let w = Action::ALL
                    .into_iter()
                    .filter_map(|a| self.neighbor(p, a))
                    .filter(|&q| from_start[self.index_of(q)].map(|x| x + 1) == d)
                    .fold(0u64, |acc, q| acc.saturating_add(ways[self.index_of(q)]));
                ways[self.index_of(p)] = w;
            }
        }
        ways[self.index_of(self.exit)]
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }
}

impl FromStr for MazeGrid {
    type Err = Error;

    /// `#` wall, `.` free, `S` start, `E` exit; one line per row.
    fn from_str(s: &str) -> Result<Self> {
        let lines: Vec<&str> = s.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        let rows = lines.len();
        let cols = lines.first().map_or(0, |l| l.chars().count());
        let mut cells = Vec::with_capacity(rows * cols);
        let (mut start, mut exit) = (None, None);
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(Error::Maze(format!("row {r} has {} columns, expected {cols}", line.chars().count())));
            }
            for (c, ch) in line.chars().enumerate() {
                let cell = match ch {
                    '#' => Cell::Wall,
                    '.' => Cell::Free,
                    'S' | 'E' => {
                        let slot = if ch == 'S' { &mut start } else { &mut exit };
                        if slot.replace(Position::new(r, c)).is_some() {
                            return Err(Error::Maze(format!("more than one `{ch}` cell")));
                        }
                        Cell::Free
                    }
                    other => return Err(Error::Maze(format!("unexpected character {other:?} at {r},{c}"))),
                };
                cells.push(cell);
            }
        }
        let start = start.ok_or_else(|| Error::Maze("missing start cell `S`".into()))?;
        let exit = exit.ok_or_else(|| Error::Maze("missing exit cell `E`".into()))?;
        MazeGrid::new(rows, cols, cells, start, exit)
    }
}

impl fmt::Display for MazeGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            for c in 0..self.cols {
                let p = Position::new(r, c);
                let ch = if p == self.start {
                    'S'
                } else if p == self.exit {
                    'E'
                } else if self.is_free(p) {
                    '.'
                } else {
                    '#'
                };
                write!(f, "{ch}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// The shipped 7×7 layout: serpentine corridors through walls in columns
/// 1, 3 and 5, with a unique 27-cell shortest path.
pub fn default_maze() -> MazeGrid {
    DEFAULT_LAYOUT.parse().expect("built-in maze layout is valid")
}

/// Ordered start→exit cells of a shortest route.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OptimalPath {
    positions: Vec<Position>,
}

impl OptimalPath {
    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Number of moves along the path.
    pub fn moves(&self) -> usize {
        self.positions.len().saturating_sub(1)
    }

    /// Cell at 1-based path index `k`.
    pub fn at(&self, k: usize) -> Option<Position> {
        k.checked_sub(1).and_then(|i| self.positions.get(i).copied())
    }
}

/// Rewards used while training the Q-network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardScheme {
    pub win: f64,
    pub blocked: f64,
    pub revisit: f64,
    pub step: f64,
    /// Episodes end as failures once the cumulative reward drops below this.
    pub abort_below: f64,
}

impl Default for RewardScheme {
    fn default() -> Self {
        RewardScheme {
            win: 1.0,
            blocked: -0.75,
            revisit: -0.25,
            step: -0.04,
            abort_below: -21.0,
        }
    }
}

impl RewardScheme {
    pub fn reward(&self, outcome: MoveOutcome, revisited: bool) -> f64 {
        match outcome {
            MoveOutcome::Win => self.win,
            MoveOutcome::Blocked => self.blocked,
            MoveOutcome::Valid if revisited => self.revisit,
            MoveOutcome::Valid => self.step,
        }
    }
}
