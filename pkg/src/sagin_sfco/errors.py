"""Exception hierarchy shared across the package."""


class SfcoError(Exception):
    pass


class ParseError(SfcoError):
    pass


class ValidationError(SfcoError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ConfigError(SfcoError):
    pass


class DomainError(SfcoError, ValueError):
    pass


class StabilityError(SfcoError):
    pass


class NoPath(SfcoError):
    def __init__(self, src, dst, bandwidth_mbps, vlink=None):
        self.src = src
        self.dst = dst
        self.bandwidth_mbps = bandwidth_mbps
        self.vlink = vlink
        super().__init__(f"no path {src} -> {dst} with {bandwidth_mbps} Mbps (vlink {vlink})")


class InsufficientNodeResources(SfcoError):
    def __init__(self, node, vnf_index, resource):
        self.node = node
        self.vnf_index = vnf_index
        self.resource = resource
        super().__init__(f"node {node} lacks {resource} for VNF {vnf_index}")


class SlaViolated(SfcoError):
    def __init__(self, bound_ms, limit_ms):
        self.bound_ms = bound_ms
        self.limit_ms = limit_ms
        super().__init__(f"delay bound {bound_ms:.3f} ms exceeds SLA {limit_ms} ms")


class UnknownRequest(SfcoError, KeyError):
    pass


class ShapeError(SfcoError, ValueError):
    pass


class NoFeasibleAction(SfcoError):
    pass
