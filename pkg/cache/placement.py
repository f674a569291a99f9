from fabric.integrity import crc32


def rendezvous_node(file_id: str, nodes: list[str]) -> str:
    """Highest-random-weight placement: deterministic, no coordination needed."""
    if not nodes:
        raise ValueError("no nodes to place on")
    return max(nodes, key=lambda node: (crc32(f"{node}/{file_id}".encode()), node))
