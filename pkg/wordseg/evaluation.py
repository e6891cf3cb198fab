"""
Evaluation of segmentation masks: confusion matrix, IoU and friends.

Predicted and ground-truth masks are compared pixel by pixel and counted
in an M x M confusion matrix (rows: ground truth, columns: prediction).
Ground-truth pixels with the value 255 are ignored. All metrics are derived
from the counts, using integer arithmetic up to the final division.

For a class c, the intersection over union is the number of pixels
correctly predicted as c divided by the number of pixels that are c in the
ground truth *or* the prediction. The mean IoU (mIoU) averages over all
classes with nonzero union. Given a split into seen and unseen classes, the
harmonic mean of the two subset mIoUs (hIoU) summarises both.


Module documentation
====================

"""
import numpy as np

from wordseg import segpipe, utils


class ConfusionMatrix:
    """
    Pixel counts of ground truth versus prediction.

    Matrices of the same size can be added, hence per-batch matrices may be
    accumulated independently and merged afterwards.

    Attributes
    ----------
    counts : :class:`numpy.ndarray`
        M x M integer matrix, rows: ground truth, columns: prediction

    total : :class:`int`
        Number of pixels counted

    images : :class:`int`
        Number of mask pairs counted

    """

    def __init__(self, M=1):  # noqa: N803
        if M < 1:
            raise ValueError("Need at least one class")
        self.counts = np.zeros((M, M), dtype=np.int64)
        self.total = 0
        self.images = 0

    @property
    def classes(self):
        """Number of classes M."""
        return self.counts.shape[0]

    def __add__(self, other):
        if self.classes != other.classes:
            raise ValueError(
                "Cannot add confusion matrices of different size"
            )
        result = ConfusionMatrix(self.classes)
        result.counts = self.counts + other.counts
        result.total = self.total + other.total
        result.images = self.images + other.images
        return result

    def accumulate(self, pred=None, gt=None):
        """
        Count the pixels of a pair of masks.

        Parameters
        ----------
        pred : :class:`wordseg.segpipe.SegmentationMask`
            Predicted labels, all in [0, M)

        gt : :class:`wordseg.segpipe.SegmentationMask`
            Ground-truth labels in [0, M) or 255 (ignored)

        Returns
        -------
        matrix : :class:`ConfusionMatrix`
            The matrix itself, for chaining

        Raises
        ------
        ValueError
            Raised if the shapes differ, the prediction contains the ignore
            value, or a label is out of range.

        """
        if pred.shape != gt.shape:
            raise ValueError(
                f"Mask shapes differ: {pred.shape} vs. {gt.shape}"
            )
        if np.any(pred.labels == segpipe.IGNORE):
            raise ValueError("Predictions must not contain the ignore value")
        pred.check(self.classes)
        gt.check(self.classes)
        valid = gt.labels != segpipe.IGNORE
        index = self.classes * gt.labels[valid] + pred.labels[valid]
        self.counts += np.bincount(
            index, minlength=self.classes**2
        ).reshape(self.classes, self.classes)
        self.total += int(valid.sum())
        self.images += 1
        return self

    def intersections(self):
        """Return the number of correct pixels per class."""
        return np.diag(self.counts)

    def unions(self):
        """Return the union of ground truth and prediction per class."""
        return (
            self.counts.sum(axis=1)
            + self.counts.sum(axis=0)
            - np.diag(self.counts)
        )

    def per_class_iou(self):
        """
        Return the IoU of every class.

        Returns
        -------
        iou : :class:`list`
            IoU per class, None for classes with zero union

        """
        return [
            None if union == 0 else int(intersection) / int(union)
            for intersection, union in zip(
                self.intersections(), self.unions()
            )
        ]

    def miou(self, classes=None):
        """
        Return the mean IoU over classes with nonzero union.

        Parameters
        ----------
        classes : :class:`list`
            If given, only these class indices are averaged over

        Returns
        -------
        miou : :class:`float`
            Mean IoU in [0, 1]

        Raises
        ------
        ValueError
            Raised if no (selected) class has a nonzero union.

        """
        ious = self.per_class_iou()
        if classes is not None:
            ious = [ious[index] for index in classes]
        ious = [iou for iou in ious if iou is not None]
        if not ious:
            raise ValueError("No class has a nonzero union")
        return sum(ious) / len(ious)

    def pixel_accuracy(self):
        """
        Return the fraction of correctly predicted pixels.

        Raises
        ------
        ValueError
            Raised if no pixels were counted.

        """
        if not self.total:
            raise ValueError("No pixels counted")
        return int(self.intersections().sum()) / self.total

    def hiou(self, unseen=None):
        """
        Return the harmonic mean of the mIoU of seen and unseen classes.

        Parameters
        ----------
        unseen : :class:`list`
            Indices of the unseen classes; all others are seen

        Returns
        -------
        miou_seen : :class:`float`
            mIoU over the seen classes

        miou_unseen : :class:`float`
            mIoU over the unseen classes

        hiou : :class:`float`
            Harmonic mean ``2ab / (a + b)``, zero if both are zero

        Raises
        ------
        ValueError
            Raised for class indices out of range or an empty split.

        """
        unseen = sorted({int(index) for index in unseen or []})
        if any(not 0 <= index < self.classes for index in unseen):
            raise ValueError("Unseen class index out of range")
        seen = [i for i in range(self.classes) if i not in set(unseen)]
        if not seen or not unseen:
            raise ValueError("Both seen and unseen classes are needed")
        seen_miou = self.miou(seen)
        unseen_miou = self.miou(unseen)
        if seen_miou + unseen_miou == 0:
            return seen_miou, unseen_miou, 0.0
        harmonic = 2 * seen_miou * unseen_miou / (seen_miou + unseen_miou)
        return seen_miou, unseen_miou, harmonic

    def report(self, names=None, unseen=None):
        """
        Render a text report with machine-readable key=value lines.

        Parameters
        ----------
        names : :class:`list`
            Class names; class indices are used if not given

        unseen : :class:`list`
            If given, the hIoU over this split is reported as well

        Returns
        -------
        report : :class:`str`
            The rendered report

        """
        names = list(names or [str(i) for i in range(self.classes)])
        if len(names) != self.classes:
            raise ValueError("Number of names differs from number of classes")
        classes = []
        for index, iou in enumerate(self.per_class_iou()):
            classes.append(
                {
                    "index": index,
                    "name": names[index],
                    "iou_text": "n/a" if iou is None else f"{iou:.5f}",
                    "iou_value": "nan" if iou is None else repr(iou),
                }
            )
        context = {
            "images": self.images,
            "pixels": self.total,
            "pixel_accuracy": self.pixel_accuracy(),
            "classes": classes,
            "miou": self.miou(),
            "hiou": None,
        }
        if unseen:
            seen_miou, unseen_miou, harmonic = self.hiou(unseen)
            context.update(
                miou_seen=seen_miou, miou_unseen=unseen_miou, hiou=harmonic
            )
        template = utils.Template(template="report.j2.txt", context=context)
        return template.render()


def read_split(path=""):
    """
    Read the indices of unseen classes from a file.

    The file lists class indices separated by whitespace or commas; "#"
    starts a comment.

    """
    indices = []
    with open(path, encoding="utf8") as file:
        for line in file:
            line = line.split("#", 1)[0].replace(",", " ")
            indices.extend(int(token) for token in line.split())
    return indices
