"""Tests for BVH parsing, forward kinematics and export."""
import numpy as np
import pytest

from tests.conftest import FIRST_FRAME_LINE, bvh_text, rest_frames
from topomotion.exceptions import DimensionError, ParseError
from topomotion.models.skeleton import Joint, SkeletonGraph
from topomotion.motion.features import motion_from_local_rotations, rest_pose_motion
from topomotion.motion.rotation import euler_to_matrix
from topomotion.skeleton.bvh import bvh_to_motion, export_bvh, motion_to_channels, parse_bvh
from topomotion.skeleton.graph import JOINT_CHANNELS, ROOT_CHANNELS, depth_first_order


def spine_turn_frames(count: int) -> list[list[float]]:
    """Rows with the spine's Z channel at 90 degrees and the root lifted by 0.1 per frame."""
    frames = rest_frames(count)
    for t, row in enumerate(frames):
        row[1] = 0.1 * t
        row[6] = 90.0
    return frames


class TestParseBvh:
    """Tests for parse_bvh."""

    def test_hierarchy(self):
        """Should read joints in hierarchy order with End Sites named after their parent."""
        skeleton, clip = parse_bvh(bvh_text(rest_frames(3)), species='fork', name='fixture')
        assert [j.name for j in skeleton.joints] == ['hips', 'spine', 'left', 'left_End', 'right', 'right_End']
        assert skeleton.parents == [-1, 0, 1, 2, 1, 4]
        assert skeleton.species == 'fork'
        assert skeleton.joints[0].rotation_order == 'ZXY'
        assert skeleton.joints[3].channels == ()
        assert skeleton.joints[2].offset == (0.3, 0.0, 0.0)

    def test_motion_section(self):
        """Should read the frame count, frame time and channel rows."""
        _, clip = parse_bvh(bvh_text(rest_frames(4), frame_time=0.025))
        assert clip.num_frames == 4
        assert clip.values.shape == (4, 15)
        assert clip.fps == pytest.approx(40.0)

    def test_bad_channel_count(self):
        """Should reject four channels with the line of the count."""
        text = bvh_text(rest_frames(2)).replace('CHANNELS 3 Zrotation', 'CHANNELS 4 Zrotation', 1)
        with pytest.raises(ParseError) as exc:
            parse_bvh(text)
        assert exc.value.line == 9
        assert str(exc.value).startswith('line 9:')

    def test_short_frame_row(self):
        """Should reject a frame row with the wrong width, citing its line."""
        frames = rest_frames(3)
        frames[1] = frames[1][:-1]
        with pytest.raises(ParseError, match="expected 15") as exc:
            parse_bvh(bvh_text(frames))
        assert exc.value.line == FIRST_FRAME_LINE + 1

    def test_non_numeric_frame_value(self):
        """Should reject non-numeric frame data."""
        text = bvh_text(rest_frames(2)).rstrip('\n') + '\n' + ' '.join(['x'] * 15) + '\n'
        text = text.replace('Frames: 2', 'Frames: 3')
        with pytest.raises(ParseError, match="Non-numeric") as exc:
            parse_bvh(text)
        assert exc.value.line == FIRST_FRAME_LINE + 2

    def test_missing_motion(self):
        """Should reject a file without a MOTION section."""
        text = bvh_text(rest_frames(1)).split('MOTION')[0]
        with pytest.raises(ParseError, match="Missing MOTION"):
            parse_bvh(text)

    def test_missing_hierarchy(self):
        """Should reject a file without a HIERARCHY keyword."""
        with pytest.raises(ParseError, match="Missing HIERARCHY"):
            parse_bvh('MOTION\nFrames: 0\nFrame Time: 0.1\n')

    def test_frame_count_mismatch(self):
        """Should reject a Frames: header that disagrees with the rows."""
        text = bvh_text(rest_frames(2)).replace('Frames: 2', 'Frames: 3')
        with pytest.raises(ParseError, match="declares 3 frames, found 2"):
            parse_bvh(text)

    def test_unbalanced_braces(self):
        """Should reject a hierarchy that closes too early."""
        text = bvh_text(rest_frames(1)).replace('\t\tJOINT right', '\t}\n\t\tJOINT right', 1)
        with pytest.raises(ParseError):
            parse_bvh(text)

    def test_non_positive_frame_time(self):
        """Should reject a zero Frame Time."""
        text = bvh_text(rest_frames(1)).replace('Frame Time: 0.05', 'Frame Time: 0')
        with pytest.raises(ParseError, match="positive"):
            parse_bvh(text)


class TestBvhToMotion:
    """Tests for forward kinematics over parsed channels."""

    def test_rest_pose_positions(self):
        """Should place joints at their accumulated offsets at rest."""
        skeleton, clip = parse_bvh(bvh_text(rest_frames(2)))
        motion = bvh_to_motion(skeleton, clip)
        expected = [[0, 0, 0], [0, 0.5, 0], [0.3, 0.5, 0], [0.5, 0.5, 0], [-0.3, 0.5, 0], [-0.5, 0.5, 0]]
        assert np.allclose(motion.positions[0], expected)
        assert np.allclose(motion.velocities, 0.0)

    def test_spine_turn(self):
        """Should rotate the spine's subtree by 90 degrees about Z."""
        skeleton, clip = parse_bvh(bvh_text(spine_turn_frames(2)))
        motion = bvh_to_motion(skeleton, clip)
        assert np.allclose(motion.positions[0, 2], [0.0, 0.8, 0.0], atol=1e-12)
        assert np.allclose(motion.positions[0, 3], [0.0, 1.0, 0.0], atol=1e-12)
        assert np.allclose(motion.positions[0, 4], [0.0, 0.2, 0.0], atol=1e-12)
        assert np.allclose(motion.rotations[0, 1], [0, 1, 0, -1, 0, 0], atol=1e-12)

    def test_root_translation_and_velocity(self):
        """Should keep the root's own position and difference it for velocity."""
        skeleton, clip = parse_bvh(bvh_text(spine_turn_frames(3)))
        motion = bvh_to_motion(skeleton, clip)
        assert np.allclose(motion.positions[:, 0, 1], [0.0, 0.1, 0.2])
        assert np.allclose(motion.velocities[1:, 0], [[0.0, 0.1, 0.0]] * 2)
        assert np.allclose(motion.velocities[0], 0.0)

    def test_translation_scale(self):
        """Should multiply translation channels by the scale factor."""
        skeleton, clip = parse_bvh(bvh_text(spine_turn_frames(3)))
        motion = bvh_to_motion(skeleton, clip, scale=2.0)
        assert motion.positions[2, 0, 1] == pytest.approx(0.4)


class TestExportBvh:
    """Tests for export_bvh."""

    def test_round_trip(self):
        """Should reproduce positions and rotations after export and re-parse."""
        frames = spine_turn_frames(4)
        for t, row in enumerate(frames):
            row[3] = 10.0 * t
            row[10] = -30.0 + 5 * t
        skeleton, clip = parse_bvh(bvh_text(frames))
        motion = bvh_to_motion(skeleton, clip)

        again_skeleton, again_clip = parse_bvh(export_bvh(skeleton, motion))
        again = bvh_to_motion(again_skeleton, again_clip)
        assert [j.name for j in again_skeleton.joints] == [j.name for j in skeleton.joints]
        assert again_skeleton.parents == skeleton.parents
        assert np.allclose(again.positions, motion.positions, atol=1e-6)
        assert np.allclose(again.rotations, motion.rotations, atol=1e-6)
        assert again_clip.frame_time == pytest.approx(clip.frame_time)

    def test_round_trip_breadth_first_skeleton(self):
        """Should keep each joint's channels with that joint when the skeleton is not stored depth-first."""
        def joint(name, parent, offset, channels=JOINT_CHANNELS):
            return Joint(name=name, parent=parent, offset=offset, channels=channels)

        skeleton = SkeletonGraph(name='fork', species='fork', joints=(
            joint('root', None, (0.0, 1.0, 0.0), ROOT_CHANNELS),
            joint('a', 0, (0.3, 0.0, 0.0)),
            joint('b', 0, (-0.3, 0.0, 0.0)),
            joint('c', 1, (0.0, -0.4, 0.0)),
            joint('d', 2, (0.0, -0.4, 0.1)),
            joint('c_End', 3, (0.0, -0.2, 0.0), ()),
            joint('d_End', 4, (0.1, -0.2, 0.0), ()),
        ))
        assert depth_first_order(skeleton) == [0, 1, 3, 5, 2, 4, 6]

        angles = np.zeros((3, 7, 3))
        angles[:, 1, 0] = 40.0
        angles[:, 2, 1] = 70.0
        angles[:, 3, 2] = -25.0
        angles[:, 4, 0] = 15.0
        angles[1:, 2, 1] += 10.0
        motion = motion_from_local_rotations(skeleton, euler_to_matrix('ZXY', angles))

        parsed, clip = parse_bvh(export_bvh(skeleton, motion))
        again = bvh_to_motion(parsed, clip)
        assert [j.name for j in parsed.joints] == ['root', 'a', 'c', 'c_End', 'b', 'd', 'd_End']

        index = {j.name: i for i, j in enumerate(parsed.joints)}
        order = [index[j.name] for j in skeleton.joints]
        assert np.allclose(again.positions[:, order], motion.positions, atol=1e-6)
        assert np.allclose(again.rotations[:, order], motion.rotations, atol=1e-6)

    def test_channels_recover_angles(self):
        """Should recover the Euler channels that produced a motion."""
        skeleton, clip = parse_bvh(bvh_text(spine_turn_frames(2)))
        channels = motion_to_channels(skeleton, bvh_to_motion(skeleton, clip))
        assert channels.shape == (2, 15)
        assert np.allclose(channels, clip.values, atol=1e-9)

    def test_rest_motion(self, skeleton):
        """Should export a generated rest pose for a fixture skeleton."""
        text = export_bvh(skeleton, rest_pose_motion(skeleton, 3))
        assert 'End Site' in text
        assert 'Frames: 3' in text
        parsed, clip = parse_bvh(text)
        assert parsed.num_joints == 6
        assert np.allclose(clip.values, 0.0)

    def test_joint_count_mismatch(self, skeleton):
        """Should reject a motion whose joint count differs from the skeleton."""
        other, clip = parse_bvh(bvh_text(rest_frames(2)))
        motion = bvh_to_motion(other, clip)
        small = motion.model_copy(update={'frames': motion.frames[:, :4]})
        with pytest.raises(DimensionError):
            export_bvh(skeleton, small)
