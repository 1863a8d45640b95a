#! /usr/bin/env python3
# -*- coding: utf-8 -*-
"""
:samp:`Command line interface to reconstruct, re-simulate, predict, edit and evaluate smoke`

Start `ffcli` from anywhere on the system with a command::

    python3 fluidfields/cli/ffcli.py gen-data --out data/plume
    python3 fluidfields/cli/ffcli.py --config desk train --data data/plume --out out/plume
    python3 fluidfields/cli/ffcli.py render --checkpoint out/plume/checkpoint.hyf --data data/plume --out images
    python3 fluidfields/cli/ffcli.py eval --rendered images/cam_2 --observed data/plume/cam_2 --out m.csv

or without a command to enter the interactive shell. In the shell the same commands are available (with
underscores, as in ``gen_data``) next to commands that set parameters and save, open and remove named
configurations. Type ``help`` in the shell for help.

Options before the command apply to every command:

 - ``--config`` path to a run configuration or name of a saved configuration
 - ``--set group.name=value`` overrides a parameter, may be repeated
 - ``--full-scale`` restores the resolutions and iteration counts of the full-scale experiments
 - ``--verbose`` logs debug messages

The exit code is 0 on success, 1 on invalid arguments, configuration or files and 2 on numerical failure.
The environment variables ``FF_THREADS`` and ``FF_DETERMINISTIC`` set the number of worker threads and
deterministic mode.

"""
import sys

if sys.version_info[0] < 3:
    raise RuntimeError("Your Python has version 2. This application needs Python3.x")

import argparse
import cmd
import glob
import logging
import os
import shlex
import traceback

import numpy as np

# Start this module from anywhere on the system: append root directory of project.
sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(os.path.realpath(__file__)))))
#                fluidfields-core   fluidfields     cli              ffcli.py
from fluidfields.core.config import Configurations
from fluidfields.core.dataset import Dataset, generate_dataset
from fluidfields.core.eval_metrics import FrameMetrics, psnr, ssim, si_rmse, warp_error, zero_velocity_warp_error
from fluidfields.core.eval_metrics import summarize, write_metrics_csv, PSNR_IDENTICAL
from fluidfields.core.ff_enum import Ablation, Stage, WarpSource
from fluidfields.core.ff_paras import RunParameters
from fluidfields.core.field_grid import sample_to_mac
from fluidfields.core.fields import GridDensity, SequenceVelocity
from fluidfields.core.fluid_sim import resimulate, predict_future, frozen_future, field_to_cells
from fluidfields.core.storage import read_checkpoint, read_particles, read_image, read_sequence, write_sequence
from fluidfields.core.storage import write_image
from fluidfields.core.training import Reconstruction
from fluidfields.core.volume_renderer import render_image
from fluidfields.core.vortex_particles import scale_intensities
from fluidfields.util.defaults import str2bool
from fluidfields.util.observe import Observer, EventObserver, ObserverInterruptException

# Set up gnureadline as readline if installed.
__GNU_READLINE__ = False
try:
    import gnureadline
    sys.modules['readline'] = gnureadline
    __GNU_READLINE__ = "gnu"
except ImportError:
    pass

LOG = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"
IMAGE_EXTENSIONS = (".ppm", ".imgf")


class UsageError(ValueError):
    pass


class CliArgumentParser(argparse.ArgumentParser):
    """Raises :exc:`UsageError` instead of exiting."""

    def error(self, message):
        raise UsageError("%s: %s" % (self.prog, message))

    def exit(self, status=0, message=None):
        if message:
            self._print_message(message, sys.stderr)
        raise SystemExit(status)


def build_parser():
    parser = CliArgumentParser(prog="ffcli", description="Reconstruct smoke density and velocity from videos")
    parser.add_argument("--config", help="run configuration file or saved configuration name")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a parameter")
    parser.add_argument("--full-scale", action="store_true", help="full-scale resolutions and iterations")
    parser.add_argument("--verbose", action="store_true", help="log debug messages")
    commands = parser.add_subparsers(dest="command", parser_class=CliArgumentParser)

    p = commands.add_parser("gen-data", help="simulate a plume and render it from cameras on an arc")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--viscosity", type=float, help="diffusion of density and velocity")
    p.add_argument("--seed", type=int, help="seed of the inflow jitter")
    p.add_argument("--force", action="store_true", help="overwrite an existing dataset")

    p = commands.add_parser("train", help="reconstruct fields from a dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", help="output directory, paths.out_dir if absent")
    p.add_argument("--stage", type=int, action="append", choices=[1, 2, 3], help="stage to run, may be repeated")
    p.add_argument("--ablation", choices=Ablation.names(), help="loss ablation")
    p.add_argument("--resume", action="store_true", help="continue from the saved state")

    p = commands.add_parser("render", help="render learned fields from dataset cameras")
    _add_field_arguments(p)
    p.add_argument("--data", required=True, help="dataset directory, for cameras and frame count")
    p.add_argument("--out", required=True, help="image directory")
    p.add_argument("--views", choices=("test", "train", "all"), default="test")

    for name, text in (("resim", "re-simulate the learned density with the learned velocity"),
                       ("edit", "re-simulate with scaled vortex particle intensities")):
        p = commands.add_parser(name, help=text)
        _add_field_arguments(p)
        _add_sequence_arguments(p)
        p.add_argument("--frames", type=int, help="frames to simulate")
        if name == "resim":
            p.add_argument("--zero-velocity", action="store_true", help="baseline: advect with zero velocity")
        else:
            p.add_argument("--vortex-scale", type=float, required=True, help="factor on particle intensities")

    p = commands.add_parser("predict", help="evolve the learned velocity beyond the observed frames")
    _add_field_arguments(p)
    _add_sequence_arguments(p)
    p.add_argument("--steps", type=int, help="steps to predict, eval.predict_steps if absent")
    p.add_argument("--frozen", action="store_true", help="baseline: repeat the last observed frame")

    p = commands.add_parser("eval", help="compute metrics")
    p.add_argument("--rendered", help="directory of rendered images")
    p.add_argument("--observed", help="directory of observed images")
    p.add_argument("--density", help="sequence directory of predicted densities")
    p.add_argument("--gt", help="sequence directory of ground-truth densities")
    p.add_argument("--checkpoint", help="checkpoint whose velocity is scored by warp error")
    p.add_argument("--particles", help="particle file added to the checkpoint velocity")
    p.add_argument("--baselines", action="store_true", help="also score the zero-velocity warp baseline")
    p.add_argument("--out", required=True, help="metrics CSV")
    return parser


def _add_field_arguments(p):
    p.add_argument("--checkpoint", required=True, help="HYF1 checkpoint")
    p.add_argument("--particles", help="VTX1 particle file")


def _add_sequence_arguments(p):
    p.add_argument("--out", required=True, help="sequence directory")
    p.add_argument("--data", help="dataset directory; held-out views of the sequence are rendered if given")
    p.add_argument("--resolution", type=int, help="grid resolution, sim.resolution if absent")


def configure_logging(verbose=False):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT)


def load_parameters(args, base: RunParameters=None) -> RunParameters:
    """
    :samp:`Parameters from configuration, overrides and flags`

    :raises: :exc:`ValueError` on unknown keys or invalid values
    """
    paras = Configurations.resolve(args.config, base)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError("Invalid --set '%s': expected KEY=VALUE" % item)
        paras.set(key, value)
    if args.full_scale:
        paras.apply_full_scale()
    return paras.validate()


def load_fields(args, paras: RunParameters):
    fields = read_checkpoint(args.checkpoint)
    if getattr(args, "particles", None):
        fields.particles = read_particles(args.particles, paras.vortex)
    return fields


def render_views(dataset: Dataset, views, frame_fields, radiance, paras: RunParameters, out_dir):
    """
    :samp:`Render every frame from the given cameras into out_dir/<camera>/frame_<f>.ppm`

    :param frame_fields: list of (density field, time) per frame
    """
    paths = []
    for index in views:
        camera = dataset.cameras[index]
        for frame, (field, t) in enumerate(frame_fields):
            path = os.path.join(out_dir, camera.name, "frame_%04d.ppm" % frame)
            write_image(path, render_image(camera, t, field, radiance, paras.render))
            paths.append(path)
    LOG.info("Rendered %d images to %s", len(paths), out_dir)
    return paths


def _views(dataset: Dataset, which):
    return {"test": dataset.test, "train": dataset.train, "all": list(range(len(dataset.cameras)))}[which]


def sequence_frame_fields(sequence):
    """
    :samp:`(density field, normalized time) per frame of a simulated sequence`
    """
    field = GridDensity(sequence.densities)
    last = max(1, len(sequence) - 1)
    return [(field, frame / last) for frame in range(len(sequence))]


def _write_sequence_and_views(args, paras, sequence, radiance):
    write_sequence(args.out, sequence)
    if args.data:
        dataset = Dataset.load(args.data)
        render_views(dataset, dataset.test, sequence_frame_fields(sequence), radiance, paras,
                     os.path.join(args.out, "images"))


def cmd_gen_data(args, paras, observers):
    if args.viscosity is not None:
        paras.sim.viscosity = args.viscosity
    if args.seed is not None:
        paras.sim.seed = args.seed
    if args.force:
        observers = [Forced(o) for o in observers]
    generate_dataset(args.out, paras, observers)


def cmd_train(args, paras, observers):
    if args.ablation:
        paras.train.ablation = args.ablation
    dataset = Dataset.load(args.data)
    stages = args.stage if args.stage else [1, 2, 3]
    reconstruction = Reconstruction(dataset, paras, args.out)
    reconstruction.register(*observers)
    reconstruction.run([Stage.value_for(s) for s in stages], args.resume)


def cmd_render(args, paras, observers):
    fields = load_fields(args, paras)
    dataset = Dataset.load(args.data)
    frame_fields = [(fields.density, dataset.frame_time(f)) for f in range(dataset.num_frames)]
    render_views(dataset, _views(dataset, args.views), frame_fields, fields.radiance, paras, args.out)


def _resim_frames(args, paras):
    if getattr(args, "frames", None):
        return args.frames
    if args.data:
        return Dataset.load(args.data).num_frames
    return paras.sim.num_frames


def _resolution(args, paras):
    n = args.resolution if args.resolution else paras.sim.resolution
    return n, n, n


def _resimulate(args, paras, fields, observers):
    velocity = None
    if not getattr(args, "zero_velocity", False):
        if fields.velocity is None:
            raise ValueError("Checkpoint %s has no velocity" % args.checkpoint)
        velocity = fields.velocity_field(with_particles=True)
    sequence = resimulate(fields.density, velocity, paras.sim, _resim_frames(args, paras), _resolution(args, paras),
                          observers)
    _write_sequence_and_views(args, paras, sequence, fields.radiance)


def cmd_resim(args, paras, observers):
    _resimulate(args, paras, load_fields(args, paras), observers)


def cmd_edit(args, paras, observers):
    if not args.particles:
        raise UsageError("edit needs --particles")
    fields = load_fields(args, paras)
    fields.particles = scale_intensities(fields.particles, args.vortex_scale)
    _resimulate(args, paras, fields, observers)


def cmd_predict(args, paras, observers):
    fields = load_fields(args, paras)
    resolution = _resolution(args, paras)
    steps = args.steps if args.steps else paras.eval.predict_steps
    dt = 1.0 / (_resim_frames(args, paras) - 1)
    density0 = np.maximum(field_to_cells(fields.density, 1.0, resolution), 0.0)
    if args.frozen:
        sequence = frozen_future(density0, steps, dt)
    else:
        if fields.velocity is None:
            raise ValueError("Checkpoint %s has no velocity" % args.checkpoint)
        vel0 = sample_to_mac(fields.velocity_field(with_particles=True), 1.0, resolution)
        sequence = predict_future(vel0, density0, steps, paras.sim, paras.solver, dt=dt)
    _write_sequence_and_views(args, paras, sequence, fields.radiance)


def _image_files(directory):
    files = []
    for root, _, names in os.walk(directory):
        files.extend(os.path.join(root, n) for n in names if os.path.splitext(n)[1].lower() in IMAGE_EXTENSIONS)
    return sorted(os.path.relpath(f, directory) for f in files)


def cmd_eval(args, paras, observers):
    rows = {}

    def row(frame):
        if frame not in rows:
            rows[frame] = FrameMetrics(frame)
        return rows[frame]

    if args.rendered or args.observed:
        if not (args.rendered and args.observed):
            raise UsageError("--rendered and --observed go together")
        rendered, observed = _image_files(args.rendered), _image_files(args.observed)
        if not rendered or rendered != observed:
            raise ValueError("Image directories %s and %s do not hold the same files" % (args.rendered,
                                                                                         args.observed))
        for frame, name in enumerate(rendered):
            a = read_image(os.path.join(args.rendered, name))
            b = read_image(os.path.join(args.observed, name))
            row(frame).psnr, row(frame).ssim = psnr(a, b), ssim(a, b)
    gt = read_sequence(args.gt) if args.gt else None
    if args.density:
        if gt is None:
            raise UsageError("--density needs --gt")
        predicted = read_sequence(args.density)
        for frame, (p, g) in enumerate(zip(predicted.densities, gt.densities)):
            row(frame).si_rmse = si_rmse(p, g, paras.eval.mask_threshold)
    baseline = []
    if gt is not None and (args.checkpoint or gt.velocities is not None):
        resolution = gt.resolution
        fields = load_fields(args, paras) if args.checkpoint else None
        if fields is not None:
            velocity_field = fields.velocity_field(with_particles=True)
        else:
            velocity_field = SequenceVelocity(gt.velocities)
        count = len(gt)
        for frame in range(count - 1):
            t = frame / (count - 1)
            if fields is not None and paras.eval.warp_source == WarpSource.model:
                source = np.maximum(field_to_cells(fields.density, t, resolution), 0.0)
            else:
                source = gt.densities[frame]
            vel = sample_to_mac(velocity_field, t, resolution)
            row(frame).warp_error = warp_error(source, gt.densities[frame + 1], vel, gt.dt,
                                               paras.eval.mask_threshold)
            if args.baselines:
                baseline.append(FrameMetrics(frame, warp_error=zero_velocity_warp_error(
                    source, gt.densities[frame + 1], gt.dt, paras.eval.mask_threshold)))
    if not rows:
        raise UsageError("Nothing to evaluate: give images, sequences or a checkpoint with --gt")
    ordered = [rows[f] for f in sorted(rows)]
    write_metrics_csv(args.out, ordered)
    summary = summarize(ordered)
    LOG.info("Mean metrics: %s", summary)
    if baseline:
        root, ext = os.path.splitext(args.out)
        write_metrics_csv(root + "_baseline" + (ext or ".csv"), baseline)
        LOG.info("Mean baseline metrics: %s", summarize(baseline))
    identical = [r.frame for r in ordered if r.psnr == PSNR_IDENTICAL]
    if identical:
        LOG.info("%d frames are identical to their observation", len(identical))
    return summary


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "render": cmd_render, "resim": cmd_resim,
            "edit": cmd_edit, "predict": cmd_predict, "eval": cmd_eval}


class Forced(Observer):
    """Passes events on to an observer and confirms on its behalf."""

    def __init__(self, observer):
        self.observer = observer

    def inform(self, source, event, **kwargs):
        self.observer.inform(source, event, **kwargs)

    def confirm(self, source, event, **kwargs):
        return True


class Veto(EventObserver):
    def confirm_clear_directory(self, *args, **kwargs):
        LOG.error("Directory %s holds a dataset; use --force to overwrite", kwargs.get("directory"))
        return False


def execute(argv, base: RunParameters=None, observers=()):
    """
    :samp:`Parse and run one command`

    :return: exit code
    """
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("No command given. Choose from %s" % ", ".join(COMMANDS))
        paras = load_parameters(args, base)
        LOG.debug("Running %s with\n%s", args.command, paras.describe())
        COMMANDS[args.command](args, paras, observers)
        return EXIT_OK
    except ArithmeticError as err:
        LOG.error("Numerical failure: %s", err)
        return EXIT_NUMERICAL
    except (ValueError, OSError, ObserverInterruptException) as err:
        LOG.error("%s", err)
        return EXIT_VALIDATION


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if not argv:
        configure_logging()
        FluidFieldsShell().cmdloop()
        return EXIT_OK
    configure_logging("--verbose" in argv)
    return execute(argv, observers=[Veto()])


#####################################################################################################
class FluidFieldsShell(cmd.Cmd, EventObserver):
    """
    :samp:`Interactive shell on a set of run parameters`

    Commands that run the pipeline take the arguments of their ``ffcli`` counterparts and start from the
    parameters of the shell; ``--set`` inside such a command does not change them.
    """

    prompt = "fluidfields > "
    intro = "======================================= \n" + \
            "Command Line Interface for Fluid Fields \n" + \
            "======================================= \n" + \
            ("-> Press 2 x <tab> for options, 1 x <tab> for completion.\n" if __GNU_READLINE__ else "") + \
            "-> For help type: help"

    def __init__(self, paras: RunParameters=None, stdin=None, stdout=None):
        cmd.Cmd.__init__(self, stdin=stdin, stdout=stdout)
        if stdin is not None:
            self.use_rawinput = False
        self.paras = paras if paras else RunParameters()
        self.stop = False

    def say(self, *parts):
        self.stdout.write(" ".join(str(part) for part in parts) + "\n")

    def ask(self, question):
        self.stdout.write("%s%s (yes | no) " % (self.prompt, question))
        self.stdout.flush()
        return str2bool(self.stdin.readline().strip())

    def postcmd(self, stop, line):
        return self.stop

    def emptyline(self):
        # an empty line does not repeat the last command
        pass

    def complete_path(self, text, line, begidx, endidx):
        word = line[line.rfind(" ", 0, begidx) + 1:endidx]
        offset = len(word) - len(text)
        matches = []
        for path in sorted(glob.glob(word + "*")):
            if os.path.isdir(path):
                path = os.path.join(path, "")
            matches.append(path[offset:])
        return matches

    def run_command(self, command, line):
        """
        :return: exit code of the command, None if it did not start
        """
        try:
            argv = [command] + shlex.split(line)
        except ValueError as err:
            self.say("Illegal argument:", err)
            return None
        try:
            code = execute(argv, self.paras, [self])
        except SystemExit:
            return None
        except Exception as err:
            traceback.print_exc()
            self.say("Uncompleted run:", err)
            return None
        if code != EXIT_OK:
            self.say("Uncompleted run, exit code %d" % code)
        return code

    def do_gen_data(self, line):
        """
gen_data --out DIR [--viscosity V] [--seed S] [--force]::

    Simulate a plume and render it from cameras on an arc.

        """
        self.run_command("gen-data", line)

    def do_train(self, line):
        """
train --data DIR [--out DIR] [--stage N]... [--ablation A] [--resume]::

    Reconstruct density, base velocity and vortex particles.

        """
        self.run_command("train", line)

    def do_render(self, line):
        """
render --checkpoint FILE [--particles FILE] --data DIR --out DIR [--views test|train|all]::

    Render learned fields from dataset cameras.

        """
        self.run_command("render", line)

    def do_resim(self, line):
        """
resim --checkpoint FILE [--particles FILE] --out DIR [--data DIR] [--zero-velocity]::

    Re-simulate the learned density with the learned velocity.

        """
        self.run_command("resim", line)

    def do_edit(self, line):
        """
edit --checkpoint FILE --particles FILE --vortex-scale F --out DIR [--data DIR]::

    Re-simulate with scaled vortex particle intensities.

        """
        self.run_command("edit", line)

    def do_predict(self, line):
        """
predict --checkpoint FILE --out DIR [--steps N] [--frozen] [--data DIR]::

    Evolve the learned velocity beyond the observed frames.

        """
        self.run_command("predict", line)

    def do_eval(self, line):
        """
eval --out FILE [--rendered DIR --observed DIR] [--density DIR] [--gt DIR] [--checkpoint FILE] [--baselines]::

    Compute metrics.

        """
        self.run_command("eval", line)

    complete_gen_data = complete_train = complete_render = complete_resim = complete_edit = complete_predict = \
        complete_eval = complete_path

    def do_list_parameters(self, line):
        """
list_parameters::

    List the current run parameters.

        """
        self.say(self.paras.describe())

    def do_set(self, line):
        """
set [key] [value]::

    set                  - List the parameters
    set key              - Show one parameter, key in the form group.name
    set key value        - Set the parameter; an invalid value leaves the parameters unchanged

        """
        parts = line.split(None, 1)
        try:
            if not parts:
                self.do_list_parameters(line)
            elif len(parts) == 1:
                self.say(parts[0], "=", self.paras.get(parts[0]))
            else:
                paras = self.paras.copy()
                paras.set(parts[0], parts[1])
                self.paras = paras.validate()
                self.say(parts[0], "=", self.paras.get(parts[0]))
        except ValueError as err:
            self.say("Illegal argument:", err)

    def complete_set(self, text, line, begidx, endidx):
        keys = (group.GROUP + "." + name for group in self.paras.groups() for name in group.FIELDS)
        return [key for key in keys if key.startswith(text)]

    def do_list_configurations(self, line):
        """
list_configurations::

    List saved configurations.

        """
        for name in Configurations.list_configurations():
            self.say(name)

    def _configuration_names(self, text, line, begidx, endidx):
        return [x for x in Configurations.list_configurations() if x.startswith(text)]

    def do_open_configuration(self, name):
        """
open_configuration name::

    Replace the current parameters by a saved configuration.

        """
        if not name:
            self.say("Specify the name of a saved configuration")
            return
        try:
            self.paras = Configurations.load_configuration(name.strip())
            self.say("Opened configuration '%s'" % name.strip())
        except ValueError as err:
            self.say("Illegal argument:", err)

    def do_save_configuration(self, name):
        """
save_configuration name::

    Save the current parameters under a name.

        """
        if not name:
            self.say("Specify a name for the configuration")
            return
        Configurations.save_configuration_as(self.paras, name.strip())
        self.say("Current configuration saved as '%s'" % name.strip())

    def do_remove_configuration(self, name):
        """
remove_configuration name::

    Remove a saved configuration.

        """
        if not name:
            self.say("Specify the name of a saved configuration")
        elif self.ask("Remove configuration '%s'?" % name.strip()):
            removed = Configurations.remove_configuration(name.strip())
            self.say(("Removed configuration '%s'" if removed else "No configuration named '%s'") % name.strip())

    complete_open_configuration = complete_remove_configuration = _configuration_names

    def do_reset(self, line):
        """
reset::

    Reset the parameters to the desk-scale defaults.

        """
        if self.ask("Reset parameters to default settings?"):
            self.paras = RunParameters()
            self.say("Parameters reset")

    def do_exit(self, line):
        """
exit, EOF, Ctrl+D::

    Leave the shell.

        """
        self.say("Bye")
        self.stop = True

    do_EOF = do_exit

    # events of the commands run from the shell
    def confirm_clear_directory(self, source, event, **kwargs):
        return self.ask("Overwrite the dataset in '%s'?" % kwargs["directory"])

    def inform_stage_end(self, source, event, **kwargs):
        self.say("Stage", kwargs["stage"].name, "finished after", kwargs["iterations"], "iterations:",
                 kwargs["losses"])

    def inform_simulation_end(self, source, event, **kwargs):
        self.say("Simulated", kwargs["num_frames"], "frames")

    def inform_generation_end(self, source, event, **kwargs):
        self.say("Dataset written:", kwargs["manifest"])


if __name__ == '__main__':
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("Bye\n")
