//! A toy data-parallel training loop: each worker computes a gradient on its
//! shard and the workers average gradients at every step.

/// Program text; workers in `corrupt` hold a missing sample at index 17,
/// which crashes them at the same statement in the same step.
pub fn program(corrupt: &[u32], steps: u32) -> String {
    let ranks: Vec<String> = corrupt.iter().map(u32::to_string).collect();
    format!(
        r#"import dist
import insitu
rank = dist.rank()
world = dist.world()
data = [[(r * 7 + i * 3) % 11 - 5 for i in range(40)] for r in range(world)]
shard = list(data[rank])
if rank in [{corrupt}]:
    shard[17] = None

def train(steps):
    w = 0.0
    for step in range(steps):
        x = shard[step % len(shard)]
        g = (w * x - 1.0) * x
        total = dist.allreduce(g)
        w = w - 0.01 * total / world
        print("step", step, w)
    return w

train = insitu.vaccinate(train)
print("final", train({steps}))
"#,
        corrupt = ranks.join(", ")
    )
}

/// Restores the lost sample from the source data and reloads `x`.
pub const FIX_ACTION: &str = "shard[17] = data[rank][17]\nx = shard[step % len(shard)]\n";

pub const STEPS: u32 = 30;
