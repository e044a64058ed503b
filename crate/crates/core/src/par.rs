//! Deterministic parallel map over independent items.
//!
//! Items are computed on up to `threads` workers and collected back in
//! index order, so the result is identical for any worker count.

use std::sync::atomic::{AtomicUsize, Ordering};

/// Apply `f` to every item, using at most `threads` workers. `f` receives
/// the item index and the item; the output vector is in input order.
pub fn par_map<T, U, F>(items: &[T], threads: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync,
{
    let threads = threads.max(1).min(items.len().max(1));
    if threads <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let mut slots: Vec<Option<U>> = Vec::with_capacity(items.len());
    slots.resize_with(items.len(), || None);
    let next = AtomicUsize::new(0);
    let slot_ptr = SendPtr(slots.as_mut_ptr());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            let f = &f;
            let next = &next;
            let slot_ptr = &slot_ptr;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let out = f(i, &items[i]);
                // Each index is claimed by exactly one worker, so the
                // write below never aliases another write.
                unsafe { *slot_ptr.0.add(i) = Some(out) };
            });
        }
    });
    slots.into_iter().map(|s| s.expect("slot filled")).collect()
}

struct SendPtr<U>(*mut Option<U>);
unsafe impl<U: Send> Send for SendPtr<U> {}
unsafe impl<U: Send> Sync for SendPtr<U> {}
