# automatically generated by the FlatBuffers compiler, do not modify

# namespace: TensorArchive

import flatbuffers
from flatbuffers.compat import import_numpy
np = import_numpy()

class ArchiveManifest(object):
    __slots__ = ['_tab']

    @classmethod
    def GetRootAs(cls, buf, offset=0):
        n = flatbuffers.encode.Get(flatbuffers.packer.uoffset, buf, offset)
        x = ArchiveManifest()
        x.Init(buf, n + offset)
        return x

    @classmethod
    def GetRootAsArchiveManifest(cls, buf, offset=0):
        """This method is deprecated. Please switch to GetRootAs."""
        return cls.GetRootAs(buf, offset)
    # ArchiveManifest
    def Init(self, buf, pos):
        self._tab = flatbuffers.table.Table(buf, pos)

    # ArchiveManifest
    def Entries(self, j):
        o = flatbuffers.number_types.UOffsetTFlags.py_type(self._tab.Offset(4))
        if o != 0:
            x = self._tab.Vector(o)
            x += flatbuffers.number_types.UOffsetTFlags.py_type(j) * 4
            x = self._tab.Indirect(x)
            from TensorArchive.TensorEntry import TensorEntry
            obj = TensorEntry()
            obj.Init(self._tab.Bytes, x)
            return obj
        return None

    # ArchiveManifest
    def EntriesLength(self):
        o = flatbuffers.number_types.UOffsetTFlags.py_type(self._tab.Offset(4))
        if o != 0:
            return self._tab.VectorLen(o)
        return 0

    # ArchiveManifest
    def EntriesIsNone(self):
        o = flatbuffers.number_types.UOffsetTFlags.py_type(self._tab.Offset(4))
        return o == 0

    # ArchiveManifest
    def Metadata(self):
        o = flatbuffers.number_types.UOffsetTFlags.py_type(self._tab.Offset(6))
        if o != 0:
            return self._tab.String(o + self._tab.Pos)
        return None

def ArchiveManifestStart(builder):
    builder.StartObject(2)

def Start(builder):
    ArchiveManifestStart(builder)

def ArchiveManifestAddEntries(builder, entries):
    builder.PrependUOffsetTRelativeSlot(0, flatbuffers.number_types.UOffsetTFlags.py_type(entries), 0)

def AddEntries(builder, entries):
    ArchiveManifestAddEntries(builder, entries)

def ArchiveManifestStartEntriesVector(builder, numElems):
    return builder.StartVector(4, numElems, 4)

def StartEntriesVector(builder, numElems):
    return ArchiveManifestStartEntriesVector(builder, numElems)

def ArchiveManifestAddMetadata(builder, metadata):
    builder.PrependUOffsetTRelativeSlot(1, flatbuffers.number_types.UOffsetTFlags.py_type(metadata), 0)

def AddMetadata(builder, metadata):
    ArchiveManifestAddMetadata(builder, metadata)

def ArchiveManifestEnd(builder):
    return builder.EndObject()

def End(builder):
    return ArchiveManifestEnd(builder)
