"""graphguard: secure DDS/ROS 2 computational graphs.

Dissect RTPS discovery traffic into a graph model, derive least-privilege
access-control policies, generate and sign DDS Security artifacts, and
monitor the wire for DDS participants with known vulnerabilities.
"""

from graphguard._kernels import BACKEND
from graphguard.discovery import EndpointAnnouncement, ParticipantAnnouncement, ProductVersion
from graphguard.graph import GraphResource, GraphSnapshot, ResourceKind, demangle, mangle
from graphguard.wire import GuidPrefix, RtpsMessage, parse_message, serialize_message

__version__ = "0.1.0"
