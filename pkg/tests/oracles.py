# Plain numpy reference implementations of the network layers, read off module parameters

import math

import numpy as np

EPS = 1e-5


def as_numpy(tensor):
    return tensor.detach().numpy()


def leaky(x):
    return np.where(x > 0, x, 0.2 * x)


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def softmax(x, axis=-1):
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def layer_norm(x, gain=1.0, offset=0.0):
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + EPS) * gain + offset


def add_norm(module, *parts):
    norm = module.norm
    return layer_norm(sum(parts), as_numpy(norm.weight), as_numpy(norm.bias))


def linear(x, layer):
    out = x @ as_numpy(layer.weight).T
    if layer.bias is not None:
        out = out + as_numpy(layer.bias)
    return out


def grn(module, x):
    projected = linear(elu(linear(x, module.fc1)), module.fc2)
    gated = linear(projected, module.glu.value) * sigmoid(linear(projected, module.glu.gate))
    return add_norm(module.add_norm, x, gated)


def soft_attention(center, members, w):
    d = center.shape[-1]
    weights = softmax(leaky(members @ w[d:] + center @ w[:d]))
    return leaky(weights @ members), weights


def hypergraph(module, x, incidence):
    """x [N x d]; hyperedges attend over members from their mean, nodes over their hyperedges"""
    w_edge = as_numpy(module.node_to_edge.weight)[0]
    w_node = as_numpy(module.edge_to_node.weight)[0]
    edges = []
    for e in range(incidence.shape[1]):
        members = x[incidence[:, e] > 0]
        edges.append(soft_attention(members.mean(axis=0), members, w_edge)[0])
    edges = np.stack(edges)
    return np.stack([soft_attention(x[i], edges[incidence[i] > 0], w_node)[0] for i in range(len(x))])


def graph(module, x, adjacency):
    w = as_numpy(module.score.weight)[0]
    rows = []
    for i in range(len(x)):
        neighbors = np.flatnonzero(adjacency[i] > 0)
        if len(neighbors) == 0:
            neighbors = np.array([i])
        rows.append(soft_attention(x[i], x[neighbors], w)[0])
    return np.stack(rows)


def variable_selection(module, features):
    weights = softmax(grn(module.select, features))
    return (weights * grn(module.embed, features)).sum(axis=-1), weights


def temporal_attention(q, k, v, temperature):
    weights = softmax(q @ np.swapaxes(k, -1, -2) / math.sqrt(k.shape[-1]) / temperature)
    return weights @ v, weights


def encoder_block(block, hidden):
    attention = block.attention
    q, k, v = (grn(g, hidden) for g in (attention.query, attention.key, attention.value))
    attended, _ = temporal_attention(q, k, v, attention.temperature)
    mixed = add_norm(block.attention_norm, attended, hidden)
    return add_norm(block.output_norm, mixed, grn(block.feed_forward, mixed))


def network(model, inputs, incidence, adjacency):
    """One sample inputs [N x lookback x 3] through the full variant of the network"""
    demand = inputs[..., 0]
    spatial = add_norm(
        model.spatial_norm,
        hypergraph(model.hypergraph, demand, incidence),
        graph(model.graph, demand, adjacency),
        demand,
    )
    features = np.stack([spatial, inputs[..., 1], inputs[..., 2]], axis=-1)
    selected, _ = variable_selection(model.variable_selection, features)
    hidden = linear(selected[..., None], model.lift)
    for block in model.encoder:
        hidden = encoder_block(block, hidden)
    out = linear(hidden.reshape(hidden.shape[0], -1), model.decoder)
    if model.config.anchor_last_value:
        out = out + demand[:, -1:]
    return out
