"""Tuned configuration shared by the experiment scripts.

These mirror the settings frozen into the acceptance suite; edit copies,
not these, when exploring.
"""

HEADLINE = dict(
    schema_version=1,
    seed=0,
    n_clients=200,
    m_per_client=100,
    n_eval_clients=50,
    p_labeled=0.2,
    rounds=300,
    cohort_size=8,
    labeled_fraction=0.5,
    local_epochs=2,
    batch_size=50,
    local_lr=0.05,
    global_lr=0.01,
    server_optimizer="adam",
    lam=0.01,
    k=64,
    f_hidden=[16],
    e_dim=32,
    encoder_hidden=[64, 64],
    head_hidden=[64],
)

# The baselines tune best under plain averaging with a hotter local step.
BASELINE_ARMS = {
    "fedavg": dict(method="fedavg", local_lr=0.1, server_optimizer="sgd", global_lr=1.0),
    "ldfedavg": dict(method="ldfedavg", local_lr=0.2, server_optimizer="sgd", global_lr=1.0),
}
