"""Shared test utilities."""


def randomize(net, rng, alpha_p=None, proj_scale=0.5):
    """Give every parameter and running statistic a random value in place.

    ``alpha_p`` fixes every auxiliary-to-primary gate when given.
    """
    for name in net.params.names():
        group = net.params.group_of(name)
        shape = net.params[name].shape
        if group in ("alpha_P", "alpha_A"):
            value = rng.uniform(0.1, 0.9)
            if group == "alpha_P" and alpha_p is not None:
                value = alpha_p
            net.params[name] = value
        elif group == "projection":
            net.params[name] = rng.normal(0.0, proj_scale, size=shape)
        elif group == "norm":
            net.params[name] = rng.uniform(0.5, 1.5) if name.endswith("gamma") else rng.normal(0.0, 0.3)
        else:
            net.params[name] = rng.normal(0.0, 0.5, size=shape)
    for state in net.buffers.values():
        state["mean"] = rng.normal(0.0, 0.3, size=state["mean"].shape)
        state["var"] = rng.uniform(0.5, 2.0, size=state["var"].shape)
    return net
