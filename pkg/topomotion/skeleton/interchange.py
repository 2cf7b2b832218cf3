"""Skeleton JSON interchange: {"name", "species", "joints": [{"name", "parent", "offset", "channels"}]}."""
import json
from typing import Any

from pydantic import ValidationError as PydanticValidationError

from topomotion.exceptions import ValidationError
from topomotion.models.skeleton import Joint, SkeletonGraph
from topomotion.utils.io import read_model_json, write_text


def skeleton_from_dict(data: dict[str, Any]) -> SkeletonGraph:
    """
    Build a skeleton from its interchange dict.

    ``parent`` may be a joint index, a joint name or null for the root.

    :raises ValidationError: If the dict is malformed or violates skeleton invariants
    """
    try:
        raw_joints = data['joints']
        names = [j['name'] for j in raw_joints]
        joints = []
        for raw in raw_joints:
            parent = raw.get('parent')
            if isinstance(parent, str):
                parent = names.index(parent)
            joints.append(Joint(
                name=raw['name'],
                parent=parent,
                offset=tuple(raw['offset']),
                channels=tuple(raw.get('channels', ())),
            ))
        return SkeletonGraph(
            name=data.get('name', 'skeleton'),
            species=data.get('species', ''),
            joints=tuple(joints),
        )
    except (KeyError, TypeError, ValueError, PydanticValidationError) as e:
        raise ValidationError(f"Invalid skeleton JSON: {e}") from e


def skeleton_to_dict(s: SkeletonGraph) -> dict[str, Any]:
    return {
        'name': s.name,
        'species': s.species,
        'joints': [
            {'name': j.name, 'parent': j.parent, 'offset': list(j.offset), 'channels': list(j.channels)}
            for j in s.joints
        ],
    }


def load_skeleton_json(path: str) -> SkeletonGraph:
    try:
        data = read_model_json(path)
    except ValueError as e:
        raise ValidationError(str(e)) from e
    if not isinstance(data, dict):
        raise ValidationError(f"Skeleton JSON in '{path}' must be an object")
    return skeleton_from_dict(data)


def dump_skeleton_json(s: SkeletonGraph, path: str) -> None:
    write_text(json.dumps(skeleton_to_dict(s), indent=2), path)
