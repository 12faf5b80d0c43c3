use srl_core::exec::Exec;

/// [`Exec`] backed by a dedicated rayon pool.
pub struct ThreadPool {
    pool: rayon::ThreadPool,
}

impl ThreadPool {
    /// `threads == 0` uses one thread per available core.
    pub fn new(threads: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .thread_name(|i| format!("srl-worker-{i}"))
            .build()
            .expect("failed to start thread pool");
        Self { pool }
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Exec for ThreadPool {
    fn run(&self, tasks: &mut [&mut (dyn FnMut() + Send)]) {
        if tasks.len() <= 1 || self.threads() == 1 {
            tasks.iter_mut().for_each(|t| t());
            return;
        }
        self.pool.scope(|s| {
            for t in tasks.iter_mut() {
                s.spawn(move |_| t());
            }
        });
    }

    fn width(&self) -> usize {
        self.threads()
    }
}
