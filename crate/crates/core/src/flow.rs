//! Max flow over integer capacities (Dinic: BFS levels, blocking flows along
//! shortest augmenting paths). Real capacities are quantized by 2^40.

pub const SCALE: f64 = (1u64 << 40) as f64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rounding {
    Down,
    Nearest,
    Up,
}

pub fn quantize(x: f64, mode: Rounding) -> u64 {
    let v = x.max(0.0) * SCALE;
    let r = match mode {
        Rounding::Down => v.floor(),
        Rounding::Nearest => v.round(),
        Rounding::Up => v.ceil(),
    };
    r as u64
}

#[derive(Clone, Debug)]
struct Arc {
    to: usize,
    rev: usize,
    cap: u64,
    orig: u64,
    infinite: bool,
}

#[derive(Clone, Debug)]
pub struct FlowNetwork {
    adj: Vec<Vec<Arc>>,
    handles: Vec<(usize, usize)>,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        Self { adj: vec![Vec::new(); nodes], handles: Vec::new() }
    }

    fn push(&mut self, u: usize, v: usize, cap: u64, infinite: bool) -> usize {
        let (ru, rv) = (self.adj[v].len(), self.adj[u].len());
        self.adj[u].push(Arc { to: v, rev: ru, cap, orig: cap, infinite });
        self.adj[v].push(Arc { to: u, rev: rv, cap: 0, orig: 0, infinite: false });
        self.handles.push((u, rv));
        self.handles.len() - 1
    }

    pub fn add_edge_int(&mut self, u: usize, v: usize, cap: u64) -> usize {
        self.push(u, v, cap, false)
    }

    pub fn add_edge(&mut self, u: usize, v: usize, cap: f64) -> usize {
        self.push(u, v, quantize(cap, Rounding::Nearest), false)
    }

    /// Edge whose capacity becomes (total capacity leaving the source) + 1 at solve time.
    pub fn add_infinite_edge(&mut self, u: usize, v: usize) -> usize {
        self.push(u, v, 0, true)
    }

    pub fn capacity_int(&self, e: usize) -> u64 {
        let (u, k) = self.handles[e];
        self.adj[u][k].orig
    }

    pub fn flow_int(&self, e: usize) -> u64 {
        let (u, k) = self.handles[e];
        let a = &self.adj[u][k];
        a.orig - a.cap
    }

    pub fn flow(&self, e: usize) -> f64 {
        self.flow_int(e) as f64 / SCALE
    }

    fn bfs(&self, s: usize, t: usize, level: &mut [i64]) -> bool {
        level.fill(-1);
        level[s] = 0;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for a in &self.adj[u] {
                if a.cap > 0 && level[a.to] < 0 {
                    level[a.to] = level[u] + 1;
                    queue.push_back(a.to);
                }
            }
        }
        level[t] >= 0
    }

    fn dfs(&mut self, u: usize, t: usize, f: u64, level: &[i64], it: &mut [usize]) -> u64 {
        if u == t {
            return f;
        }
        while it[u] < self.adj[u].len() {
            let k = it[u];
            let (to, cap) = (self.adj[u][k].to, self.adj[u][k].cap);
            if cap > 0 && level[to] == level[u] + 1 {
                let d = self.dfs(to, t, f.min(cap), level, it);
                if d > 0 {
                    self.adj[u][k].cap -= d;
                    let rev = self.adj[u][k].rev;
                    self.adj[to][rev].cap += d;
                    return d;
                }
            }
            it[u] += 1;
        }
        0
    }

    /// Maximum flow value in scaled integer units.
    pub fn max_flow_int(&mut self, s: usize, t: usize) -> u64 {
        let big = self.adj[s].iter().filter(|a| !a.infinite).map(|a| a.orig).sum::<u64>() + 1;
        for row in &mut self.adj {
            for a in row.iter_mut().filter(|a| a.infinite) {
                a.cap = big;
                a.orig = big;
            }
        }
        let n = self.adj.len();
        let mut level = vec![-1; n];
        let mut total = 0u64;
        while self.bfs(s, t, &mut level) {
            let mut it = vec![0; n];
            loop {
                let f = self.dfs(s, t, u64::MAX, &level, &mut it);
                if f == 0 {
                    break;
                }
                total += f;
            }
        }
        total
    }

    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        self.max_flow_int(s, t) as f64 / SCALE
    }
}
