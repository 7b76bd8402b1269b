# automatically generated by the FlatBuffers compiler, do not modify

# namespace: TensorArchive

import flatbuffers
from flatbuffers.compat import import_numpy
np = import_numpy()

class TensorEntry(object):
    __slots__ = ['_tab']

    @classmethod
    def GetRootAs(cls, buf, offset=0):
        n = flatbuffers.encode.Get(flatbuffers.packer.uoffset, buf, offset)
        x = TensorEntry()
        x.Init(buf, n + offset)
        return x

    @classmethod
    def GetRootAsTensorEntry(cls, buf, offset=0):
        """This method is deprecated. Please switch to GetRootAs."""
        return cls.GetRootAs(buf, offset)
    # TensorEntry
    def Init(self, buf, pos):
        self._tab = flatbuffers.table.Table(buf, pos)

    # TensorEntry
    def Name(self):
        o = flatbuffers.number_types.UOffsetTFlags.py_type(self._tab.Offset(4))
        if o != 0:
            return self._tab.String(o + self._tab.Pos)
        return None

    # TensorEntry
    def Dtype(self):
        o = flatbuffers.number_types.UOffsetTFlags.py_type(self._tab.Offset(6))
        if o != 0:
            return self._tab.Get(flatbuffers.number_types.Int8Flags, o + self._tab.Pos)
        return 0

    # TensorEntry
    def Shape(self, j):
        o = flatbuffers.number_types.UOffsetTFlags.py_type(self._tab.Offset(8))
        if o != 0:
            a = self._tab.Vector(o)
            return self._tab.Get(flatbuffers.number_types.Uint32Flags, a + flatbuffers.number_types.UOffsetTFlags.py_type(j * 4))
        return 0

    # TensorEntry
    def ShapeAsNumpy(self):
        o = flatbuffers.number_types.UOffsetTFlags.py_type(self._tab.Offset(8))
        if o != 0:
            return self._tab.GetVectorAsNumpy(flatbuffers.number_types.Uint32Flags, o)
        return 0

    # TensorEntry
    def ShapeLength(self):
        o = flatbuffers.number_types.UOffsetTFlags.py_type(self._tab.Offset(8))
        if o != 0:
            return self._tab.VectorLen(o)
        return 0

    # TensorEntry
    def ShapeIsNone(self):
        o = flatbuffers.number_types.UOffsetTFlags.py_type(self._tab.Offset(8))
        return o == 0

    # TensorEntry
    def Offset(self):
        o = flatbuffers.number_types.UOffsetTFlags.py_type(self._tab.Offset(10))
        if o != 0:
            return self._tab.Get(flatbuffers.number_types.Uint64Flags, o + self._tab.Pos)
        return 0

    # TensorEntry
    def Length(self):
        o = flatbuffers.number_types.UOffsetTFlags.py_type(self._tab.Offset(12))
        if o != 0:
            return self._tab.Get(flatbuffers.number_types.Uint64Flags, o + self._tab.Pos)
        return 0

    # TensorEntry
    def Sha256(self, j):
        o = flatbuffers.number_types.UOffsetTFlags.py_type(self._tab.Offset(14))
        if o != 0:
            a = self._tab.Vector(o)
            return self._tab.Get(flatbuffers.number_types.Uint8Flags, a + flatbuffers.number_types.UOffsetTFlags.py_type(j * 1))
        return 0

    # TensorEntry
    def Sha256AsNumpy(self):
        o = flatbuffers.number_types.UOffsetTFlags.py_type(self._tab.Offset(14))
        if o != 0:
            return self._tab.GetVectorAsNumpy(flatbuffers.number_types.Uint8Flags, o)
        return 0

    # TensorEntry
    def Sha256Length(self):
        o = flatbuffers.number_types.UOffsetTFlags.py_type(self._tab.Offset(14))
        if o != 0:
            return self._tab.VectorLen(o)
        return 0

    # TensorEntry
    def Sha256IsNone(self):
        o = flatbuffers.number_types.UOffsetTFlags.py_type(self._tab.Offset(14))
        return o == 0

def TensorEntryStart(builder):
    builder.StartObject(6)

def Start(builder):
    TensorEntryStart(builder)

def TensorEntryAddName(builder, name):
    builder.PrependUOffsetTRelativeSlot(0, flatbuffers.number_types.UOffsetTFlags.py_type(name), 0)

def AddName(builder, name):
    TensorEntryAddName(builder, name)

def TensorEntryAddDtype(builder, dtype):
    builder.PrependInt8Slot(1, dtype, 0)

def AddDtype(builder, dtype):
    TensorEntryAddDtype(builder, dtype)

def TensorEntryAddShape(builder, shape):
    builder.PrependUOffsetTRelativeSlot(2, flatbuffers.number_types.UOffsetTFlags.py_type(shape), 0)

def AddShape(builder, shape):
    TensorEntryAddShape(builder, shape)

def TensorEntryStartShapeVector(builder, numElems):
    return builder.StartVector(4, numElems, 4)

def StartShapeVector(builder, numElems):
    return TensorEntryStartShapeVector(builder, numElems)

def TensorEntryAddOffset(builder, offset):
    builder.PrependUint64Slot(3, offset, 0)

def AddOffset(builder, offset):
    TensorEntryAddOffset(builder, offset)

def TensorEntryAddLength(builder, length):
    builder.PrependUint64Slot(4, length, 0)

def AddLength(builder, length):
    TensorEntryAddLength(builder, length)

def TensorEntryAddSha256(builder, sha256):
    builder.PrependUOffsetTRelativeSlot(5, flatbuffers.number_types.UOffsetTFlags.py_type(sha256), 0)

def AddSha256(builder, sha256):
    TensorEntryAddSha256(builder, sha256)

def TensorEntryStartSha256Vector(builder, numElems):
    return builder.StartVector(1, numElems, 1)

def StartSha256Vector(builder, numElems):
    return TensorEntryStartSha256Vector(builder, numElems)

def TensorEntryEnd(builder):
    return builder.EndObject()

def End(builder):
    return TensorEntryEnd(builder)
