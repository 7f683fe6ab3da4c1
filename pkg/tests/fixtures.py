"""Hand-built topologies shared across test modules."""

from ccsim.ledger import Ledger

# node names of the two-cluster example used for the IPC check
TWO_CLUSTER_EDGES = [
    ("A", "C"), ("A", "D"), ("A", "E"), ("A", "F"),
    ("G", "D"), ("G", "F"), ("H", "C"), ("H", "I"),
    ("E", "I"), ("E", "K"), ("F", "J"),
    ("IA", "FA"), ("IA", "K"), ("EA", "E"), ("EA", "F"), ("CA", "F"),
    ("B", "CA"), ("B", "EA"), ("B", "DA"), ("B", "FA"),
    ("FA", "JA"), ("KA", "FA"), ("KA", "DA"), ("DA", "GA"),
]


def two_cluster_ledger():
    names = sorted({x for e in TWO_CLUSTER_EDGES for x in e})
    ids = {name: i for i, name in enumerate(names)}
    led = Ledger()
    for a, b in TWO_CLUSTER_EDGES:
        led.register_contract(ids[a], ids[b], 0.0)
    return led, ids
